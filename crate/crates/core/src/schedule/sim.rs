use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CvChain, CycleSchedule, Edge, Stage, Task};
use crate::error::{Error, Result};

/// Schema tag carried by serialized timelines.
pub const TIMELINE_SCHEMA: &str = "amla.timeline.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Cube,
    Vector,
}

impl Lane {
    fn as_str(self) -> &'static str {
        match self {
            Lane::Cube => "cube",
            Lane::Vector => "vector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preload,
    Steady,
    Drain,
    /// The closing vector block after the drain.
    Final,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Preload => "preload",
            Phase::Steady => "steady",
            Phase::Drain => "drain",
            Phase::Final => "final",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Every block starts as soon as its lane is free and its producer has
    /// finished.
    #[default]
    SelfTimed,
    /// Steady-cycle blocks start at the fixed offsets of the cycle template;
    /// a dependency the template does not honour is an error.
    TimeTriggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: SimMode,
    /// Hold the first cycle until every preload block has finished.
    pub preload_barrier: bool,
    /// Duration of the closing vector block; 0 omits it.
    pub final_vector: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { mode: SimMode::SelfTimed, preload_barrier: true, final_vector: 0 }
    }
}

/// One executed block. `block` is the stage label (`C2`, `V1`, or `Vfinal`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub unit: Lane,
    pub block: String,
    pub iteration: usize,
    pub start: u64,
    pub end: u64,
    pub phase: Phase,
    /// Steady cycle number (1-based), 0 outside the steady loop.
    pub cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineReport {
    pub num_cycles: usize,
    pub preload_count: usize,
    pub preload_blocks: usize,
    pub preload_makespan: u64,
    pub makespan: u64,
    /// Lane with the larger per-cycle workload.
    pub binding_lane: Lane,
    /// Cycle length bound `max(sum C, sum V)`.
    pub cycle_bound: u64,
    /// Per-cycle length on the binding lane: from the cycle's first block to
    /// the next cycle's first block (to the last block's end for the final
    /// cycle).
    pub cycle_lengths: Vec<u64>,
    /// Length of the last steady cycle, if there was one.
    pub steady_cycle_length: Option<u64>,
    /// Idle time on the binding lane between its last preload block and the
    /// start of cycle 1.
    pub barrier_wait: u64,
    /// Idle time on the binding lane inside cycle 1.
    pub warmup_stall: u64,
    /// Idle time on the binding lane in cycles 2 and later.
    pub steady_stall: u64,
    /// First cycle from which every later cycle is a time-shifted copy.
    pub periodic_from: Option<usize>,
    pub cube_busy: u64,
    pub vector_busy: u64,
    /// Edges whose producer runs in the same cycle as the consumer.
    pub internal_edges: Vec<String>,
    /// Edges fed from an earlier cycle.
    pub cross_cycle_edges: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub schema: String,
    pub chain: CvChain,
    pub schedule: CycleSchedule,
    pub events: Vec<TimelineEvent>,
    pub report: TimelineReport,
}

impl Timeline {
    pub const CSV_HEADER: &'static str = "unit,block,iteration,start,end,phase,cycle";

    /// Flat event list, one row per block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.unit.as_str(),
                e.block,
                e.iteration,
                e.start,
                e.end,
                e.phase.as_str(),
                e.cycle
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    task: Option<Task>,
    duration: u64,
    phase: Phase,
    cycle: usize,
}

struct Plan {
    lanes: [Vec<Job>; 2],
}

fn build_plan(chain: &CvChain, schedule: &CycleSchedule, num_cycles: usize, final_vector: u64) -> Plan {
    let big_l = schedule.preload_count();
    let lags = schedule.lags();
    let lane_idx = |s: Stage| usize::from(!s.is_cube());
    let mut lanes: [Vec<Job>; 2] = [Vec::new(), Vec::new()];
    let push = |lanes: &mut [Vec<Job>; 2], task: Task, phase: Phase, cycle: usize| {
        lanes[lane_idx(task.stage)].push(Job {
            task: Some(task),
            duration: chain.duration(task.stage),
            phase,
            cycle,
        });
    };

    for task in schedule.preload_sequence() {
        push(&mut lanes, task, Phase::Preload, 0);
    }
    for t in 1..=num_cycles {
        for &i in &schedule.cube_order {
            let stage = Stage::Cube(i);
            push(&mut lanes, Task { stage, iteration: t + big_l - lags[stage.position()] }, Phase::Steady, t);
        }
        for &i in &schedule.vector_order {
            let stage = Stage::Vector(i);
            push(&mut lanes, Task { stage, iteration: t + big_l - lags[stage.position()] }, Phase::Steady, t);
        }
    }
    let total = num_cycles + big_l;
    for iteration in 1..=total {
        for stage in chain.stages() {
            if iteration > num_cycles + big_l - lags[stage.position()] {
                push(&mut lanes, Task { stage, iteration }, Phase::Drain, 0);
            }
        }
    }
    if final_vector > 0 {
        lanes[1].push(Job { task: None, duration: final_vector, phase: Phase::Final, cycle: 0 });
    }
    Plan { lanes }
}

fn edge_label(from: Stage, to: Stage, iteration: usize) -> String {
    format!("{from}->{to} (iteration {iteration})")
}

/// Runs `num_cycles` steady cycles of `schedule`, preceded by its preload
/// phase and followed by the drain, with default options.
pub fn simulate_pipeline(chain: &CvChain, schedule: &CycleSchedule, num_cycles: usize) -> Result<Timeline> {
    simulate_pipeline_with(chain, schedule, num_cycles, SimOptions::default())
}

pub fn simulate_pipeline_with(
    chain: &CvChain,
    schedule: &CycleSchedule,
    num_cycles: usize,
    options: SimOptions,
) -> Result<Timeline> {
    if schedule.n != chain.n()
        || schedule.cube_order.len() != chain.n()
        || schedule.vector_order.len() != chain.n()
    {
        return Err(Error::ScheduleInvalid(format!(
            "schedule is for n = {}, chain has n = {}",
            schedule.n,
            chain.n()
        )));
    }
    let plan = build_plan(chain, schedule, num_cycles, options.final_vector);
    let preload_jobs = [0, 1].map(|l| plan.lanes[l].iter().filter(|j| j.phase == Phase::Preload).count());

    let mut placed: [Vec<(u64, u64)>; 2] = [Vec::new(), Vec::new()];
    let mut ends: HashMap<Task, u64> = HashMap::new();
    let mut clock = [0u64; 2];
    let mut next = [0usize; 2];
    let mut preload_end = 0u64;

    loop {
        let mut progressed = false;
        for lane in 0..2 {
            while next[lane] < plan.lanes[lane].len() {
                let job = plan.lanes[lane][next[lane]];
                let mut ready = clock[lane];
                let mut blocked = false;
                if let Some(task) = job.task {
                    if let Some(p) = task.stage.producer() {
                        match ends.get(&Task { stage: p, iteration: task.iteration }) {
                            Some(&e) => ready = ready.max(e),
                            None => blocked = true,
                        }
                    }
                }
                if job.phase == Phase::Steady && options.preload_barrier {
                    if (0..2).any(|l| next[l] < preload_jobs[l]) {
                        blocked = true;
                    }
                    ready = ready.max(preload_end);
                }
                if job.phase == Phase::Final {
                    if next[0] < plan.lanes[0].len() {
                        blocked = true;
                    }
                    ready = ready.max(clock[0]);
                }
                if blocked {
                    break;
                }
                let start = if job.phase == Phase::Steady && options.mode == SimMode::TimeTriggered {
                    let task = job.task.unwrap();
                    let fixed = preload_end
                        + (job.cycle as u64 - 1) * schedule.cycle_length
                        + schedule.offset(task.stage);
                    if fixed < clock[lane] {
                        return Err(Error::ScheduleInvalid(format!(
                            "{} in cycle {} is timed to start at {fixed} while its lane is busy until {}",
                            task.stage, job.cycle, clock[lane]
                        )));
                    }
                    fixed
                } else {
                    ready
                };
                let end = start + job.duration;
                placed[lane].push((start, end));
                if let Some(task) = job.task {
                    ends.insert(task, end);
                }
                if job.phase == Phase::Preload {
                    preload_end = preload_end.max(end);
                }
                clock[lane] = end;
                next[lane] += 1;
                progressed = true;
            }
        }
        if next[0] == plan.lanes[0].len() && next[1] == plan.lanes[1].len() {
            break;
        }
        if !progressed {
            let waiting = (0..2)
                .filter_map(|l| plan.lanes[l].get(next[l]))
                .filter_map(|j| j.task)
                .find_map(|t| t.stage.producer().map(|p| edge_label(p, t.stage, t.iteration)))
                .unwrap_or_else(|| "preload barrier".into());
            return Err(Error::ScheduleInvalid(format!("deadlock: waiting on {waiting}")));
        }
    }

    // Every dependency: producer ends no later than the consumer starts.
    let mut events = Vec::new();
    for lane in 0..2 {
        for (job, &(start, end)) in plan.lanes[lane].iter().zip(&placed[lane]) {
            if let Some(task) = job.task {
                if let Some(p) = task.stage.producer() {
                    let pe = ends[&Task { stage: p, iteration: task.iteration }];
                    if pe > start {
                        return Err(Error::ScheduleInvalid(format!(
                            "dependency {} violated: producer ends at {pe}, consumer starts at {start}",
                            edge_label(p, task.stage, task.iteration)
                        )));
                    }
                }
            }
            events.push(TimelineEvent {
                unit: if lane == 0 { Lane::Cube } else { Lane::Vector },
                block: job.task.map_or_else(|| "Vfinal".to_string(), |t| t.stage.to_string()),
                iteration: job.task.map_or(0, |t| t.iteration),
                start,
                end,
                phase: job.phase,
                cycle: job.cycle,
            });
        }
    }
    debug_assert!(events.iter().all(|e| e.unit == job_lane(e)));
    events.sort_by(|a, b| (a.start, a.end, a.unit.as_str()).cmp(&(b.start, b.end, b.unit.as_str())));

    let report = summarize(chain, schedule, num_cycles, &plan, &placed, &events);
    Ok(Timeline {
        schema: TIMELINE_SCHEMA.to_string(),
        chain: chain.clone(),
        schedule: schedule.clone(),
        events,
        report,
    })
}

fn job_lane(e: &TimelineEvent) -> Lane {
    if e.block.starts_with('C') {
        Lane::Cube
    } else {
        Lane::Vector
    }
}

fn summarize(
    chain: &CvChain,
    schedule: &CycleSchedule,
    num_cycles: usize,
    plan: &Plan,
    placed: &[Vec<(u64, u64)>; 2],
    events: &[TimelineEvent],
) -> TimelineReport {
    let binding = usize::from(chain.vector_total() > chain.cube_total());
    let jobs = &plan.lanes[binding];
    let slots = &placed[binding];

    let mut first_start = vec![None; num_cycles + 1];
    let mut last_end = vec![0u64; num_cycles + 1];
    let (mut barrier_wait, mut warmup_stall, mut steady_stall) = (0u64, 0u64, 0u64);
    let mut prev_end = 0u64;
    for (job, &(start, end)) in jobs.iter().zip(slots) {
        if job.phase == Phase::Steady {
            let gap = start - prev_end;
            if job.cycle == 1 && first_start[1].is_none() {
                barrier_wait = gap;
            } else if job.cycle == 1 {
                warmup_stall += gap;
            } else {
                steady_stall += gap;
            }
            first_start[job.cycle].get_or_insert(start);
            last_end[job.cycle] = end;
        }
        prev_end = end;
    }
    let cycle_lengths: Vec<u64> = (1..=num_cycles)
        .map(|t| {
            let s = first_start[t].unwrap_or(0);
            if t < num_cycles {
                first_start[t + 1].unwrap_or(s) - s
            } else {
                last_end[t] - s
            }
        })
        .collect();

    // Shifted-copy check over both lanes.
    let per_cycle = |t: usize| -> Vec<(Lane, String, u64, u64)> {
        let base = first_start[t].unwrap_or(0);
        events
            .iter()
            .filter(|e| e.phase == Phase::Steady && e.cycle == t)
            .map(|e| (e.unit, e.block.clone(), e.start.wrapping_sub(base), e.end.wrapping_sub(base)))
            .collect()
    };
    let periodic_from = if num_cycles == 0 {
        None
    } else {
        let last = per_cycle(num_cycles);
        let mut from = num_cycles;
        while from > 1 && per_cycle(from - 1) == last {
            from -= 1;
        }
        Some(from)
    };

    let busy = |lane: usize| placed[lane].iter().map(|(s, e)| e - s).sum();
    let preload_makespan = events
        .iter()
        .filter(|e| e.phase == Phase::Preload)
        .map(|e| e.end)
        .max()
        .unwrap_or(0);
    let label = |e: &Edge| e.to_string();
    TimelineReport {
        num_cycles,
        preload_count: schedule.preload_count(),
        preload_blocks: events.iter().filter(|e| e.phase == Phase::Preload).count(),
        preload_makespan,
        makespan: events.iter().map(|e| e.end).max().unwrap_or(0),
        binding_lane: if binding == 0 { Lane::Cube } else { Lane::Vector },
        cycle_bound: chain.cycle_bound(),
        steady_cycle_length: cycle_lengths.last().copied(),
        cycle_lengths,
        barrier_wait,
        warmup_stall,
        steady_stall,
        periodic_from,
        cube_busy: busy(0),
        vector_busy: busy(1),
        internal_edges: schedule.internal_edges.iter().map(label).collect(),
        cross_cycle_edges: schedule.cross_cycle_edges().iter().map(label).collect(),
    }
}
