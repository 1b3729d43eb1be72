use std::path::Path;

use super::graph::ModelGraph;
use super::layers::LayerSpec;
use super::optim::Optimizer;
use super::tensor::Scalar;
use crate::codec::{self, ArtifactHeader, Reader, Writer};
use crate::error::{HarError, Result};
use crate::seed;

pub const KIND: &str = "checkpoint";
pub const VERSION: u32 = 1;

/// Layer specs and parameter values of one named graph, always in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub name: String,
    pub specs: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub params: Vec<Vec<f64>>,
}

impl GraphState {
    pub fn capture<F: Scalar>(name: &str, g: &ModelGraph<F>) -> Self {
        Self {
            name: name.to_string(),
            specs: g.specs(),
            input_shape: g.input_shape().to_vec(),
            params: g.export_params(),
        }
    }

    pub fn restore<F: Scalar>(&self) -> Result<ModelGraph<F>> {
        // init values are overwritten right away
        let mut g = ModelGraph::new(&self.specs, &self.input_shape, &mut seed::rng_from(0))?;
        g.import_params(&self.params)?;
        Ok(g)
    }
}

/// Everything needed to resume or reuse a training run. Per-epoch random
/// streams are derived from (seed, epoch), so `epoch` plus the header
/// seed pins the generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: ArtifactHeader,
    /// Which training task produced the weights, e.g. `supervised` or `simclr`.
    pub task: String,
    pub epoch: usize,
    pub graphs: Vec<GraphState>,
    pub optimizer: Option<Optimizer>,
    /// Task-specific training state (history, cursors).
    pub extra: Vec<u8>,
}

impl Checkpoint {
    pub fn graph(&self, name: &str) -> Result<&GraphState> {
        self.graphs
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| HarError::Format(format!("checkpoint has no graph named '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.header.write(&mut w);
        w.str(&self.task);
        w.usize(self.epoch);
        w.usize(self.graphs.len());
        for g in &self.graphs {
            w.str(&g.name);
            w.str(&serde_json::to_string(&g.specs).expect("layer specs serialize"));
            w.usizes(&g.input_shape);
            w.usize(g.params.len());
            for p in &g.params {
                w.f64s(p);
            }
        }
        w.bool(self.optimizer.is_some());
        if let Some(o) = &self.optimizer {
            o.write(&mut w);
        }
        w.u8s(&self.extra);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header = ArtifactHeader::expect(&mut r, KIND, VERSION)?;
        let task = r.str()?;
        let epoch = r.usize()?;
        let n = r.usize()?;
        let mut graphs = Vec::new();
        for _ in 0..n {
            let name = r.str()?;
            let specs: Vec<LayerSpec> = serde_json::from_str(&r.str()?)
                .map_err(|e| HarError::Format(format!("layer specs of '{name}': {e}")))?;
            let input_shape = r.usizes()?;
            let k = r.usize()?;
            let params = (0..k).map(|_| r.f64s()).collect::<Result<_>>()?;
            graphs.push(GraphState {
                name,
                specs,
                input_shape,
                params,
            });
        }
        let optimizer = if r.bool()? {
            Some(Optimizer::read(&mut r)?)
        } else {
            None
        };
        let extra = r.u8s()?;
        if !r.is_empty() {
            return Err(HarError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            header,
            task,
            epoch,
            graphs,
            optimizer,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path)?)
    }
}
