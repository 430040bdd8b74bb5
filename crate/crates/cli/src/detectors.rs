//! Detectors available from the command line besides the oracle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Mutex;

use virtview::classes::NUM_CLASSES;
use virtview::codec::{anchor_at, read_records, WireRecord};
use virtview::pipeline::{AnchorOutput, Detector};
use virtview::raster::Raster;
use virtview::viewport::VirtualViewSpec;

use crate::error::CliError;

/// Replays head outputs stored in the wire format.
pub struct StubDetector {
    by_view: BTreeMap<u32, Vec<WireRecord>>,
}

impl StubDetector {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let (n_classes, records) = read_records(&mut BufReader::new(f))
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if n_classes as usize != NUM_CLASSES {
            return Err(CliError::Data(format!(
                "{}: {n_classes} classes, expected {NUM_CLASSES}",
                path.display()
            )));
        }
        let mut by_view: BTreeMap<u32, Vec<WireRecord>> = BTreeMap::new();
        for r in records {
            by_view.entry(r.view).or_default().push(r);
        }
        Ok(Self { by_view })
    }
}

impl Detector for StubDetector {
    fn detect(
        &self,
        view: usize,
        spec: &VirtualViewSpec,
        _image: Option<&Raster>,
    ) -> Result<Vec<AnchorOutput>, String> {
        let Some(recs) = self.by_view.get(&(view as u32)) else {
            return Ok(Vec::new());
        };
        recs.iter()
            .map(|r| {
                let anchor = anchor_at(
                    r.stride,
                    r.col,
                    r.row,
                    r.anchor,
                    spec.out_width,
                    spec.out_height,
                )
                .map_err(|e| format!("view {view}: {e}"))?;
                Ok(AnchorOutput {
                    anchor,
                    raw: r.raw.clone(),
                })
            })
            .collect()
    }
}

/// Forwards to another detector and keeps a copy of every output.
pub struct Recorder<'a> {
    inner: &'a dyn Detector,
    seen: Mutex<Vec<WireRecord>>,
}

impl<'a> Recorder<'a> {
    pub fn new(inner: &'a dyn Detector) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Recorded outputs ordered by view; within a view, in detector order.
    pub fn into_records(self) -> Vec<WireRecord> {
        let mut v = self.seen.into_inner().unwrap_or_else(|p| p.into_inner());
        v.sort_by_key(|r| r.view);
        v
    }
}

impl Detector for Recorder<'_> {
    fn detect(
        &self,
        view: usize,
        spec: &VirtualViewSpec,
        image: Option<&Raster>,
    ) -> Result<Vec<AnchorOutput>, String> {
        let out = self.inner.detect(view, spec, image)?;
        let recs: Vec<WireRecord> = out
            .iter()
            .map(|o| WireRecord {
                view: view as u32,
                stride: o.anchor.stride,
                col: o.anchor.col,
                row: o.anchor.row,
                anchor: o.anchor.index,
                raw: o.raw.clone(),
            })
            .collect();
        self.seen
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .extend(recs);
        Ok(out)
    }
}
