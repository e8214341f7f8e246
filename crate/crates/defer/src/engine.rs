//! The sequential estimation loop.
//!
//! Each step selects leaves to divide, evaluates the density at every new
//! centroid in one batch, forms the children, and keeps the index, top-mass
//! tracker, and mass aggregates in sync. The loop runs until the leaf count
//! reaches the budget.
//!
//! Densities are taken in log space. The engine fixes a global offset equal
//! to the negated first finite log density it observes, so masses are
//! exponentiated near unit scale; the offset cancels in every normalized
//! quantity and shifts log evidence by a known constant. Raw 128-bit-style
//! accumulation without the shift would underflow for extreme log densities.

use std::time::{Duration, Instant};

use crate::accum::{dd_sum, TwoFloat};
use crate::criteria::{select_to_divide, CriteriaConfig};
use crate::domain::DomainSpec;
use crate::error::{DeferError, Result};
use crate::geom::centroid_coord;
use crate::index::{LeafIndex, TopMasses};
use crate::tree::{NodeId, Tree};

/// A black-box unnormalised density, evaluated in batches.
///
/// Implementations must be deterministic (same point, same value) and must
/// never return NaN; `-inf` encodes zero density. Batch entries are
/// independent and order-insensitive, so an implementation may evaluate them
/// concurrently as long as outputs line up with inputs.
pub trait DensityFunction {
    fn dim(&self) -> usize;

    /// Evaluate log densities for `points` in original units, flattened as
    /// `dim`-sized rows. Push one value per point onto `out`.
    fn eval_batch(&mut self, points: &[f64], out: &mut Vec<f64>) -> Result<()>;
}

/// Adapter for plain closures over single points.
pub struct FnDensity<F: FnMut(&[f64]) -> f64> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64]) -> f64> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F: FnMut(&[f64]) -> f64> DensityFunction for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&mut self, points: &[f64], out: &mut Vec<f64>) -> Result<()> {
        for p in points.chunks_exact(self.dim) {
            out.push((self.f)(p));
        }
        Ok(())
    }
}

/// Running mass totals in extended precision, plus the global log offset.
#[derive(Debug, Clone)]
pub struct Aggregates {
    z: TwoFloat,
    /// `-(first observed finite log f)`; fixed for the rest of the run.
    offset: Option<f64>,
    /// Cumulative magnitude of included masses, for the negativity tolerance.
    included_magnitude: f64,
}

impl Aggregates {
    pub fn new() -> Self {
        Aggregates {
            z: TwoFloat::ZERO,
            offset: None,
            included_magnitude: 0.0,
        }
    }

    /// Aggregates for a reloaded run whose offset is already known.
    pub fn with_offset(offset: f64) -> Self {
        Aggregates {
            z: TwoFloat::ZERO,
            offset: Some(offset),
            included_magnitude: 0.0,
        }
    }

    /// Global shift applied to log densities before exponentiation.
    pub fn log_offset(&self) -> f64 {
        self.offset.unwrap_or(0.0)
    }

    /// Total offset-shifted mass as a double.
    pub fn z_shifted(&self) -> f64 {
        self.z.value()
    }

    /// Natural log of the offset-shifted total mass.
    pub fn log_z_shifted(&self) -> f64 {
        self.z.ln()
    }

    /// Log evidence in original units: shifted log total, minus the offset,
    /// plus the domain log-volume correction.
    pub fn log_z_original(&self, domain: &DomainSpec) -> f64 {
        self.log_z_shifted() - self.log_offset() + domain.log_volume()
    }

    pub fn is_all_zero(&self) -> bool {
        self.z_shifted() == 0.0
    }

    /// Offset-shifted mass of a box with normalized volume `volume` and
    /// observed log density `log_f`. Establishes the offset on the first
    /// finite observation.
    pub fn mass_for(&mut self, volume: f64, log_f: f64) -> Result<f64> {
        if log_f.is_nan() {
            return Err(DeferError::Evaluation("density returned NaN".into()));
        }
        if self.offset.is_none() && log_f.is_finite() {
            self.offset = Some(-log_f);
        }
        let shifted = log_f + self.log_offset();
        let mass = volume * shifted.exp();
        if mass.is_infinite() {
            return Err(DeferError::Evaluation(format!(
                "mass overflow: log density {log_f} exceeds the dynamic range \
                 anchored at the first observation"
            )));
        }
        Ok(mass)
    }

    pub fn include(&mut self, mass: f64) {
        self.z.add_f64(mass);
        self.included_magnitude += mass;
    }

    /// Subtract a previously included mass. Returns true when the running
    /// total dipped negative beyond tolerance and needs a full recompute.
    #[must_use]
    pub fn exclude(&mut self, mass: f64) -> bool {
        self.z.sub_f64(mass);
        if self.z.is_negative() {
            let tol = 1e-9 * self.included_magnitude.max(f64::MIN_POSITIVE);
            if self.z.value().abs() > tol {
                return true;
            }
            self.z = TwoFloat::ZERO;
        }
        false
    }

    /// Replace the running total with a fresh extended-precision sum.
    pub fn reset_z(&mut self, fresh: TwoFloat) {
        self.z = fresh;
    }

    pub(crate) fn z_dd(&self) -> TwoFloat {
        self.z
    }
}

impl Default for Aggregates {
    fn default() -> Self {
        Self::new()
    }
}

/// Batch include/exclude of `(normalized volume, log_f)` pairs. Exclusions
/// must replay previously included observations so their masses cancel
/// bit-for-bit. A negative dip beyond tolerance reports an invariant
/// violation (the engine instead recomputes from the leaves, which it can).
pub fn update_aggregates(
    agg: &mut Aggregates,
    include: &[(f64, f64)],
    exclude: &[(f64, f64)],
) -> Result<()> {
    for &(v, log_f) in include {
        let m = agg.mass_for(v, log_f)?;
        agg.include(m);
    }
    for &(v, log_f) in exclude {
        let m = agg.mass_for(v, log_f)?;
        if agg.exclude(m) {
            return Err(DeferError::Invariant(
                "aggregate mass went negative beyond tolerance".into(),
            ));
        }
    }
    Ok(())
}

/// Engine parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EngineConfig {
    /// Target leaf/evaluation count; the loop stops once reached.
    pub budget: usize,
    pub seed: u64,
    pub criteria: CriteriaConfig,
    /// Fixed checkpoint stride in evaluations (0 disables).
    pub checkpoint_every: usize,
    /// Explicit evaluation counts at which to checkpoint.
    pub checkpoints: Vec<usize>,
}

impl EngineConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        EngineConfig {
            budget,
            seed,
            criteria: CriteriaConfig::default(),
            checkpoint_every: 0,
            checkpoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(DeferError::InvalidConfig("budget must be >= 1".into()));
        }
        self.criteria.validate()
    }
}

/// One timeline row. Times are cumulative since run start; decision time
/// excludes density evaluation and checkpoint instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub evals: usize,
    pub log_z: f64,
    pub entropy: f64,
    pub decision_seconds: f64,
    pub wall_seconds: f64,
    pub unique_keys: usize,
    pub leaf_count: usize,
}

/// Everything a finished run produces.
pub struct RunOutput {
    pub tree: Tree,
    pub aggregates: Aggregates,
    pub timeline: Vec<Checkpoint>,
    pub decision_seconds: f64,
    pub eval_seconds: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Leaves divided this step, ascending by id.
    pub divided: Vec<NodeId>,
    /// New leaf ids created this step.
    pub created: Vec<NodeId>,
}

struct DivisionPlan {
    node: NodeId,
    /// Candidate dimensions (minimal depth), ascending.
    dims: Vec<usize>,
    /// Offset of this plan's first probe value in the step batch.
    value_offset: usize,
}

/// Stepping engine over one density function.
pub struct Runner<'f> {
    density: &'f mut dyn DensityFunction,
    tree: Tree,
    index: LeafIndex,
    top_masses: TopMasses,
    aggregates: Aggregates,
    config: EngineConfig,
    iteration: u64,
    started: Instant,
    decision_time: Duration,
    eval_time: Duration,
    timeline: Vec<Checkpoint>,
    next_geometric: usize,
    next_stride: usize,
    /// Remaining explicit checkpoints, ascending.
    pending: Vec<usize>,
    pending_at: usize,
}

impl<'f> Runner<'f> {
    pub fn new(
        density: &'f mut dyn DensityFunction,
        domain: DomainSpec,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        if density.dim() != domain.dim() {
            return Err(DeferError::InvalidConfig(format!(
                "density dimension {} does not match domain dimension {}",
                density.dim(),
                domain.dim()
            )));
        }
        let started = Instant::now();

        // Evaluate the domain center: the root observation.
        let root_box = crate::geom::TernaryBox::root(domain.dim());
        let mut center = Vec::with_capacity(domain.dim());
        domain.denormalize_point(&root_box.centroid(), &mut center);
        let mut values = Vec::with_capacity(1);
        let t_eval = Instant::now();
        density.eval_batch(&center, &mut values)?;
        let eval_time = t_eval.elapsed();
        if values.len() != 1 {
            return Err(DeferError::Evaluation(format!(
                "expected 1 value from the density, got {}",
                values.len()
            )));
        }
        let log_f = values[0];

        let mut aggregates = Aggregates::new();
        let mass = aggregates.mass_for(1.0, log_f)?;
        aggregates.include(mass);

        let tree = Tree::create_root(domain, log_f, mass)?;
        let mut index = LeafIndex::new();
        index.insert(Tree::ROOT, tree.boxx(Tree::ROOT).depths(), mass)?;
        let mut top_masses = TopMasses::new();
        top_masses.include(Tree::ROOT, mass);

        let mut pending = config.checkpoints.clone();
        pending.sort_unstable();
        pending.dedup();

        let stride = config.checkpoint_every;
        let mut runner = Runner {
            density,
            tree,
            index,
            top_masses,
            aggregates,
            config,
            iteration: 0,
            started,
            decision_time: Duration::ZERO,
            eval_time,
            timeline: Vec::new(),
            next_geometric: 1,
            next_stride: if stride > 0 { stride } else { usize::MAX },
            pending,
            pending_at: 0,
        };
        runner.maybe_checkpoint();
        Ok(runner)
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn aggregates(&self) -> &Aggregates {
        &self.aggregates
    }

    pub fn unique_keys(&self) -> usize {
        self.index.unique_keys()
    }

    pub fn timeline(&self) -> &[Checkpoint] {
        &self.timeline
    }

    /// Max-abscissa hull candidate (the member that is always divided).
    pub fn current_rightmost(&mut self) -> Option<NodeId> {
        let cands = self.index.hull_candidates();
        let members = crate::hull::urqh(&cands);
        members.last().map(|m| m.point.node_id)
    }

    /// Run one iteration: select, divide every selected leaf, update
    /// structures, and emit any due checkpoints.
    pub fn step(&mut self) -> Result<StepReport> {
        let t0 = Instant::now();
        let selected = select_to_divide(
            &self.tree,
            &mut self.index,
            &mut self.top_masses,
            self.aggregates.z_shifted(),
            &self.config.criteria,
            self.config.seed,
            self.iteration,
        );
        self.iteration += 1;
        self.decision_time += t0.elapsed();

        let created = self.divide_batch(&selected)?;
        debug_assert_eq!(self.tree.eval_count(), self.tree.leaf_count());
        self.maybe_checkpoint();
        Ok(StepReport {
            divided: selected,
            created,
        })
    }

    /// Divide a single live leaf (a one-element batch).
    pub fn divide(&mut self, node: NodeId) -> Result<Vec<NodeId>> {
        if !self.tree.is_leaf(node) {
            return Err(DeferError::Invariant(format!(
                "node {node} is not a live leaf"
            )));
        }
        self.divide_batch(&[node])
    }

    /// Divide the given leaves, evaluating all new centroids in one batch.
    fn divide_batch(&mut self, selected: &[NodeId]) -> Result<Vec<NodeId>> {
        let t0 = Instant::now();
        let dim = self.tree.dim();
        let mut plans: Vec<DivisionPlan> = Vec::with_capacity(selected.len());
        let mut probes: Vec<f64> = Vec::new();
        let mut n_probe_points = 0usize;

        for &node in selected {
            debug_assert!(self.tree.is_leaf(node));
            let boxx = self.tree.boxx(node);
            let depths = boxx.depths();
            let min_depth = *depths.iter().min().expect("non-empty depth vector");
            if min_depth >= crate::geom::MAX_DEPTH {
                return Err(DeferError::DepthLimit {
                    dim: depths.iter().position(|&k| k == min_depth).unwrap_or(0),
                    max: crate::geom::MAX_DEPTH,
                });
            }
            let dims: Vec<usize> = (0..dim).filter(|&d| depths[d] == min_depth).collect();
            let centroid = boxx.centroid();
            let value_offset = n_probe_points;
            for &d in &dims {
                let n3 = 3 * boxx.numerators()[d];
                let child_depth = depths[d] + 1;
                // Probe coordinates are the outer child centroids, computed
                // from integer bounds so they match the stored centroids.
                for num in [n3, n3 + 2] {
                    let mut p = centroid.clone();
                    p[d] = centroid_coord(num, child_depth);
                    for (di, &u) in p.iter().enumerate() {
                        probes.push(self.tree.domain().denormalize_coord(di, u));
                    }
                    n_probe_points += 1;
                }
            }
            plans.push(DivisionPlan {
                node,
                dims,
                value_offset,
            });
        }
        self.decision_time += t0.elapsed();

        let t_eval = Instant::now();
        let mut values: Vec<f64> = Vec::with_capacity(n_probe_points);
        self.density.eval_batch(&probes, &mut values)?;
        self.eval_time += t_eval.elapsed();
        if values.len() != n_probe_points {
            return Err(DeferError::Evaluation(format!(
                "expected {n_probe_points} values from the density, got {}",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() {
                let p = &probes[i * dim..(i + 1) * dim];
                return Err(DeferError::Evaluation(format!(
                    "density returned NaN at {p:?}"
                )));
            }
        }

        let t1 = Instant::now();
        let mut created = Vec::new();
        for plan in &plans {
            let m = plan.dims.len();
            let vals = &values[plan.value_offset..plan.value_offset + 2 * m];

            // Rank dimensions by the highest value observed along each,
            // descending; ties go to the lower dimension index.
            let mut ranked: Vec<(usize, f64)> = plan
                .dims
                .iter()
                .enumerate()
                .map(|(j, &d)| (d, vals[2 * j].max(vals[2 * j + 1])))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let ranked_dims: Vec<usize> = ranked.iter().map(|&(d, _)| d).collect();

            let parent_box = self.tree.boxx(plan.node).clone();
            let parent_log_f = self.tree.log_f(plan.node);
            let parent_mass = self.tree.mass(plan.node);
            let children = parent_box.trisect(&ranked_dims)?;

            let mut entries: Vec<(crate::geom::TernaryBox, f64, f64)> =
                Vec::with_capacity(children.len());
            for (ci, child) in children.into_iter().enumerate() {
                let log_f = if child.is_center {
                    // The center partition inherits the parent's observation.
                    parent_log_f
                } else {
                    let rank_j = ci / 2;
                    let dim_d = ranked_dims[rank_j];
                    let pos = plan.dims.iter().position(|&d| d == dim_d).expect("ranked dim");
                    // Lower third carries the minus probe, upper the plus.
                    let lower = child.boxx.numerators()[dim_d] % 3 == 0;
                    vals[2 * pos + usize::from(!lower)]
                };
                let mass = self.aggregates.mass_for(child.boxx.volume(), log_f)?;
                entries.push((child.boxx, log_f, mass));
            }

            let ids = self.tree.push_children(plan.node, entries)?;
            self.index.remove(plan.node, parent_box.depths())?;
            if self.aggregates.exclude(parent_mass) {
                self.recompute_z();
                if self.aggregates.z_dd().is_negative() {
                    return Err(DeferError::Invariant(
                        "total mass negative after full recompute".into(),
                    ));
                }
            }
            for id in ids {
                let mass = self.tree.mass(id);
                self.index
                    .insert(id, self.tree.boxx(id).depths(), mass)?;
                self.aggregates.include(mass);
                self.top_masses.include(id, mass);
                created.push(id);
            }
        }
        self.decision_time += t1.elapsed();
        Ok(created)
    }

    fn recompute_z(&mut self) {
        let fresh = dd_sum(self.tree.leaf_ids().map(|l| self.tree.mass(l)));
        self.aggregates.reset_z(fresh);
    }

    /// Emit at most one timeline row if a checkpoint threshold was crossed.
    /// Runs a full extended-precision recompute of the total mass to bound
    /// accumulation drift.
    fn maybe_checkpoint(&mut self) {
        let evals = self.tree.eval_count();
        let mut due = false;
        if evals >= self.next_geometric {
            due = true;
            self.next_geometric = evals + (evals / 10).max(1);
        }
        if evals >= self.next_stride {
            due = true;
            let stride = self.config.checkpoint_every;
            while self.next_stride <= evals {
                self.next_stride += stride;
            }
        }
        while self.pending_at < self.pending.len() && self.pending[self.pending_at] <= evals {
            due = true;
            self.pending_at += 1;
        }
        if due {
            self.emit_checkpoint();
        }
    }

    fn emit_checkpoint(&mut self) {
        let fresh = dd_sum(self.tree.leaf_ids().map(|l| self.tree.mass(l)));
        let running = self.aggregates.z_shifted();
        let rel = (running - fresh.value()).abs() / fresh.value().abs().max(f64::MIN_POSITIVE);
        debug_assert!(
            rel <= 1e-9 || fresh.value() == 0.0,
            "running total drifted by {rel}"
        );
        self.aggregates.reset_z(fresh);

        let log_z = self.aggregates.log_z_original(self.tree.domain());
        let entropy =
            crate::queries::entropy(&self.tree, &self.aggregates).unwrap_or(f64::NAN);
        self.timeline.push(Checkpoint {
            evals: self.tree.eval_count(),
            log_z,
            entropy,
            decision_seconds: self.decision_time.as_secs_f64(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            unique_keys: self.index.unique_keys(),
            leaf_count: self.tree.leaf_count(),
        });
    }

    /// Run to the configured budget and finish.
    pub fn run_to_budget(mut self) -> Result<RunOutput> {
        while self.tree.leaf_count() < self.config.budget {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Finalize, emitting a last checkpoint if the timeline is stale.
    pub fn finish(mut self) -> RunOutput {
        let evals = self.tree.eval_count();
        if self.timeline.last().map(|c| c.evals) != Some(evals) {
            self.emit_checkpoint();
        }
        RunOutput {
            tree: self.tree,
            aggregates: self.aggregates,
            decision_seconds: self.decision_time.as_secs_f64(),
            eval_seconds: self.eval_time.as_secs_f64(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            timeline: self.timeline,
        }
    }
}

/// Convenience wrapper: construct a runner and drive it to the budget.
pub fn run(
    density: &mut dyn DensityFunction,
    domain: DomainSpec,
    config: EngineConfig,
) -> Result<RunOutput> {
    Runner::new(density, domain, config)?.run_to_budget()
}
