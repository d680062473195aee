use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::io;
use crate::spectral::heat_semigroup;

/// Graded partition 0 < t_1 < ... < t_J = T of the solution interval with
/// nodes t_j = T (j/J)^gamma and a per-subinterval Gauss quadrature order.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    gamma: f64,
    quad_order: usize,
    nodes: Vec<f64>,
}

/// Serializable mesh parameters (the nodes are reproducible from these).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeGridSpec {
    pub horizon: f64,
    pub nodes: usize,
    pub gamma_grade: f64,
    pub quad_order: usize,
}

fn graded(r: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        r
    } else if gamma == 2.0 {
        r * r
    } else {
        r.powf(gamma)
    }
}

/// Builds a graded time mesh. `j` of at least 16 is recommended for production
/// runs; the constructor accepts any j >= 2 so that coarse meshes remain
/// expressible in tests and examples.
pub fn make_time_grid(horizon: f64, j: usize, gamma_grade: f64, quad_order: usize) -> Result<TimeGrid> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
    }
    if j < 2 {
        return Err(Error::invalid("nodes", format!("need at least 2 nodes, got {j}")));
    }
    if !(gamma_grade >= 1.0) {
        return Err(Error::invalid(
            "gamma_grade",
            format!("must be >= 1, got {gamma_grade}"),
        ));
    }
    if !(2..=8).contains(&quad_order) {
        return Err(Error::invalid(
            "quad_order",
            format!("must lie in 2..=8, got {quad_order}"),
        ));
    }
    let nodes = (1..=j)
        .map(|i| horizon * graded(i as f64 / j as f64, gamma_grade))
        .collect();
    Ok(TimeGrid {
        horizon,
        gamma: gamma_grade,
        quad_order,
        nodes,
    })
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn gamma_grade(&self) -> f64 {
        self.gamma
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    /// Same grading with twice the nodes; even refinement nests the coarse nodes.
    pub fn refine(&self) -> TimeGrid {
        make_time_grid(self.horizon, 2 * self.len(), self.gamma, self.quad_order)
            .expect("refinement of a valid mesh is valid")
    }

    /// Same shape over a shorter horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<TimeGrid> {
        make_time_grid(horizon, self.len(), self.gamma, self.quad_order)
    }

    pub fn spec(&self) -> TimeGridSpec {
        TimeGridSpec {
            horizon: self.horizon,
            nodes: self.len(),
            gamma_grade: self.gamma,
            quad_order: self.quad_order,
        }
    }

    pub fn from_spec(spec: &TimeGridSpec) -> Result<TimeGrid> {
        make_time_grid(spec.horizon, spec.nodes, spec.gamma_grade, spec.quad_order)
    }

    /// Index i such that nodes[i] <= tau <= nodes[i+1], clamped to the ends.
    fn bracket(&self, tau: f64) -> usize {
        match self
            .nodes
            .binary_search_by(|probe| probe.partial_cmp(&tau).expect("finite nodes"))
        {
            Ok(i) => i.min(self.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.len() - 2),
        }
    }
}

/// A time-indexed family of fields over a `TimeGrid`, one field per node,
/// optionally carrying the initial datum the path evolved from.
#[derive(Clone, Debug)]
pub struct PathSample {
    grid: Grid,
    tgrid: TimeGrid,
    fields: Vec<Field>,
    initial: Option<Field>,
}

impl PathSample {
    pub fn new(tgrid: TimeGrid, fields: Vec<Field>, initial: Option<Field>) -> Result<Self> {
        if fields.len() != tgrid.len() {
            return Err(Error::MeshMismatch(format!(
                "{} fields for {} nodes",
                fields.len(),
                tgrid.len()
            )));
        }
        let grid = fields
            .first()
            .map(|f| f.grid().clone())
            .ok_or_else(|| Error::MeshMismatch("empty path".into()))?;
        for f in &fields {
            if *f.grid() != grid {
                return Err(Error::GridMismatch("path fields on different grids".into()));
            }
        }
        if let Some(u0) = &initial {
            if *u0.grid() != grid {
                return Err(Error::GridMismatch("initial datum on a different grid".into()));
            }
        }
        Ok(PathSample {
            grid,
            tgrid,
            fields,
            initial,
        })
    }

    pub fn zero(grid: &Grid, tgrid: &TimeGrid) -> Self {
        let fields = (0..tgrid.len()).map(|_| Field::zero(grid)).collect();
        PathSample {
            grid: grid.clone(),
            tgrid: tgrid.clone(),
            fields,
            initial: Some(Field::zero(grid)),
        }
    }

    /// The heat flow e^{t Delta} u0 sampled at the mesh nodes.
    pub fn heat_flow(u0: &Field, tgrid: &TimeGrid) -> Result<Self> {
        let fields = tgrid
            .nodes()
            .iter()
            .map(|&t| heat_semigroup(u0, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSample {
            grid: u0.grid().clone(),
            tgrid: tgrid.clone(),
            fields,
            initial: Some(u0.clone()),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, j: usize) -> &Field {
        &self.fields[j]
    }

    pub fn initial(&self) -> Option<&Field> {
        self.initial.as_ref()
    }

    pub fn divergence_free(&self) -> bool {
        self.fields.iter().all(|f| f.divergence_free)
    }

    /// Value at an arbitrary time by piecewise-linear interpolation in ln t,
    /// clamped to the first/last node outside the sampled range.
    pub fn at(&self, tau: f64) -> Field {
        let nodes = self.tgrid.nodes();
        if tau <= nodes[0] {
            return self.fields[0].clone();
        }
        if tau >= *nodes.last().expect("nonempty") {
            return self.fields.last().expect("nonempty").clone();
        }
        let i = self.tgrid.bracket(tau);
        let (t0, t1) = (nodes[i], nodes[i + 1]);
        let w = (tau.ln() - t0.ln()) / (t1.ln() - t0.ln());
        self.fields[i].scale(1.0 - w).add(&self.fields[i + 1].scale(w))
    }

    pub fn same_mesh(&self, other: &PathSample) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("paths on different grids".into()));
        }
        if self.tgrid != other.tgrid {
            return Err(Error::MeshMismatch("paths on different time meshes".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &PathSample) -> Result<PathSample> {
        self.same_mesh(other)?;
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.add(b))
            .collect();
        let initial = match (&self.initial, &other.initial) {
            (Some(a), Some(b)) => Some(a.add(b)),
            _ => None,
        };
        Ok(PathSample {
            grid: self.grid.clone(),
            tgrid: self.tgrid.clone(),
            fields,
            initial,
        })
    }

    pub fn sub(&self, other: &PathSample) -> Result<PathSample> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, alpha: f64) -> PathSample {
        PathSample {
            grid: self.grid.clone(),
            tgrid: self.tgrid.clone(),
            fields: self.fields.iter().map(|f| f.scale(alpha)).collect(),
            initial: self.initial.as_ref().map(|f| f.scale(alpha)),
        }
    }

    /// Resamples the path onto another mesh by ln-t interpolation.
    pub fn resample(&self, tgrid: &TimeGrid) -> PathSample {
        let fields = tgrid.nodes().iter().map(|&t| self.at(t)).collect();
        PathSample {
            grid: self.grid.clone(),
            tgrid: tgrid.clone(),
            fields,
            initial: self.initial.clone(),
        }
    }

    /// Serializes as a directory: tgrid.json plus one field container per node.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.tgrid.spec())
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("tgrid.json"), json)?;
        for (j, f) in self.fields.iter().enumerate() {
            io::write_field_to_path(f, dir.join(format!("node_{j:04}.nslg")))?;
        }
        if let Some(u0) = &self.initial {
            io::write_field_to_path(u0, dir.join("initial.nslg"))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<PathSample> {
        let dir = dir.as_ref();
        let raw = std::fs::read_to_string(dir.join("tgrid.json"))?;
        let spec: TimeGridSpec =
            serde_json::from_str(&raw).map_err(|e| Error::Format(e.to_string()))?;
        let tgrid = TimeGrid::from_spec(&spec)?;
        let fields = (0..tgrid.len())
            .map(|j| io::read_field_from_path(dir.join(format!("node_{j:04}.nslg"))))
            .collect::<Result<Vec<_>>>()?;
        let initial_path = dir.join("initial.nslg");
        let initial = if initial_path.exists() {
            Some(io::read_field_from_path(initial_path)?)
        } else {
            None
        };
        PathSample::new(tgrid, fields, initial)
    }
}
