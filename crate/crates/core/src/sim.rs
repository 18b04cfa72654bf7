//! Drives a world with a scheduler, a workload and optional metrics.

use crate::engine::{Completion, World};
use crate::error::Result;
use crate::metrics::Metrics;
use crate::ops::OpSpec;
use crate::sched::Scheduler;
use crate::workload::{Observation, Workload};
use crate::Pid;

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Horizon,
    /// The workload is done and every operation returned.
    Quiescent,
    /// The caller's stop predicate fired.
    Predicate,
}

pub struct Sim {
    pub world: World,
    pub sched: Scheduler,
    pub workload: Workload,
    pub metrics: Option<Metrics>,
    observed: Vec<Completion>,
    free: Vec<Pid>,
    invokes: Vec<(Pid, OpSpec)>,
    schedule: Vec<Pid>,
}

impl Sim {
    pub fn new(world: World, sched: Scheduler, workload: Workload) -> Self {
        Sim {
            world,
            sched,
            workload,
            metrics: None,
            observed: Vec::new(),
            free: Vec::new(),
            invokes: Vec::new(),
            schedule: Vec::new(),
        }
    }

    pub fn with_metrics(mut self, metrics: Metrics) -> Self {
        self.metrics = Some(metrics);
        self
    }

    /// Runs one timestep: workload invocations, scheduling, execution.
    pub fn step(&mut self) -> Result<()> {
        self.step_inner(true)
    }

    fn step_inner(&mut self, invoke: bool) -> Result<()> {
        if invoke {
            let t = self.world.t();
            self.world.free_into(&mut self.free);
            let obs = Observation { t, completed: &self.observed, free: &self.free };
            self.workload.decide(&obs, &mut self.invokes);
            for &(pid, spec) in &self.invokes {
                self.world.invoke(pid, spec)?;
            }
        }
        self.sched.select(&self.world, &mut self.schedule)?;
        self.world.step(&self.schedule)?;
        self.observed.clear();
        self.observed.extend_from_slice(self.world.completions());
        if let Some(m) = self.metrics.as_mut() {
            m.observe(&self.world);
        }
        Ok(())
    }

    /// Runs until `horizon` timesteps have executed, the system is quiescent
    /// with an exhausted workload, or `stop` returns true after a step.
    pub fn run_until(&mut self, horizon: u64, mut stop: impl FnMut(&World) -> bool) -> Result<StopReason> {
        while self.world.t() < horizon {
            if self.world.t() > 0 && self.workload.exhausted(self.world.t()) && self.world.quiescent() {
                return Ok(StopReason::Quiescent);
            }
            self.step()?;
            if stop(&self.world) {
                return Ok(StopReason::Predicate);
            }
        }
        Ok(StopReason::Horizon)
    }

    pub fn run(&mut self, horizon: u64) -> Result<StopReason> {
        self.run_until(horizon, |_| false)
    }

    /// Runs the workload until `horizon`, then keeps stepping without new
    /// invocations until every operation returned or `drain` more steps
    /// passed.
    pub fn run_drained(&mut self, horizon: u64, drain: u64) -> Result<StopReason> {
        if self.run(horizon)? == StopReason::Quiescent {
            return Ok(StopReason::Quiescent);
        }
        let end = horizon.saturating_add(drain);
        while self.world.t() < end {
            if self.world.quiescent() {
                return Ok(StopReason::Quiescent);
            }
            self.step_inner(false)?;
        }
        Ok(if self.world.quiescent() { StopReason::Quiescent } else { StopReason::Horizon })
    }
}
