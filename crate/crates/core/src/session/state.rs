use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::cost::sclera_residual_with;
use crate::eye::{project_shadow, FitResult, Pixel};
use crate::oracle::{OracleConfig, PerceptionOracle};
use crate::se3::{ToolState, Vec3};
use crate::task::{
    derive_seed, plan_vessel, run_localization, run_navigation_benchmark, GoalEntry, NavPhase, Navigator, PixelGrid,
    Scenario, Simulator, TaskError, TaskSettings, VesselPath, VesselPlan,
};

use super::protocol::{ClientCommand, ClientMessage, ErrorCode, MalformedFrame, Mode, ServerEvent, ServerMessage, PROTO_VERSION};

/// Most points sent in a plan preview.
const PREVIEW_POINTS: usize = 21;
const MAX_LOCALIZATION_SAMPLES: usize = 10_000;
const MAX_BENCHMARK_GOALS: usize = 100;

/// One entry of the serialized command/tick queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Input {
    Command { message: ClientMessage },
    Malformed { frame: MalformedFrame },
    Tick,
}

#[derive(Debug, Clone)]
enum Activity {
    Idle,
    Navigate(Box<NavigationRun>),
    Localize { pixels: Vec<Pixel>, oracle_seed: u64 },
    Vessel(Box<VesselRun>),
}

#[derive(Debug, Clone)]
struct NavigationRun {
    navigator: Navigator,
    target: Vec3,
    sclera: Vec<f64>,
    start_steps: u64,
}

#[derive(Debug, Clone)]
struct VesselRun {
    plan: VesselPlan,
    fit: FitResult,
    executed: Vec<ToolState>,
}

type Rejection = (ErrorCode, String);

/// Session host state. All mutation goes through [`Session::apply`].
#[derive(Debug, Clone)]
pub struct Session {
    config: Config,
    settings: TaskSettings,
    scenario: Scenario,
    sim: Simulator,
    fit: Option<FitResult>,
    activity: Activity,
    paused: bool,
    pending_benchmark: Option<(usize, u64)>,
    tick: u64,
    event_seq: u64,
    /// Counts oracle streams handed out, so each task gets fresh noise.
    draws: u64,
    budget: usize,
}

impl Session {
    pub fn new(config: Config) -> Result<Self, TaskError> {
        let settings = config.task_settings();
        let scenario = config.scenario;
        scenario.validate()?;
        let sim = Simulator::new(
            scenario.initial_state(),
            settings.solver.integration(&settings.cost),
            settings.limits,
        )?;
        Ok(Self {
            budget: config.session.solve_iteration_budget,
            config,
            settings,
            scenario,
            sim,
            fit: None,
            activity: Activity::Idle,
            paused: false,
            pending_benchmark: None,
            tick: 0,
            event_seq: 0,
            draws: 0,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        match self.activity {
            Activity::Idle => Mode::Idle,
            Activity::Navigate(_) => Mode::Navigating,
            Activity::Localize { .. } => Mode::Localizing,
            Activity::Vessel(_) => Mode::Vessel,
        }
    }

    pub fn tool(&self) -> &ToolState {
        &self.sim.state
    }

    pub fn fit(&self) -> Option<&FitResult> {
        self.fit.as_ref()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.sim.cfg.dt
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt()
    }

    /// Connection handshake. Carries `seq` 0 and does not advance the event sequence.
    pub fn hello(&self) -> ServerMessage {
        ServerMessage {
            proto_version: PROTO_VERSION,
            seq: 0,
            time_s: self.time(),
            event: ServerEvent::Hello {
                mm_per_pixel: self.scenario.camera.scale,
                image_width: self.scenario.camera.width,
                image_height: self.scenario.camera.height,
                tick_hz: 1.0 / self.dt(),
                replan_hz: self.settings.nav.replan_hz,
                retina: self.scenario.true_eye,
                sclera_point: self.scenario.sclera_point,
                mode: self.mode(),
            },
        }
    }

    pub fn apply(&mut self, input: &Input) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        match input {
            Input::Command { message } => self.handle_command(message, &mut out),
            Input::Malformed { frame } => self.emit(
                &mut out,
                ServerEvent::Rejected {
                    command_seq: frame.command_seq,
                    code: ErrorCode::BadPayload,
                    message: frame.message.clone(),
                },
            ),
            Input::Tick => self.advance(&mut out),
        }
        out
    }

    pub fn handle(&mut self, message: &ClientMessage) -> Vec<ServerMessage> {
        self.apply(&Input::Command {
            message: message.clone(),
        })
    }

    pub fn tick(&mut self) -> Vec<ServerMessage> {
        self.apply(&Input::Tick)
    }

    fn emit(&mut self, out: &mut Vec<ServerMessage>, event: ServerEvent) {
        self.event_seq += 1;
        out.push(ServerMessage {
            proto_version: PROTO_VERSION,
            seq: self.event_seq,
            time_s: self.time(),
            event,
        });
    }

    fn handle_command(&mut self, message: &ClientMessage, out: &mut Vec<ServerMessage>) {
        let event = match self.try_command(&message.command) {
            Ok(()) => ServerEvent::Accepted {
                command_seq: message.seq,
            },
            Err((code, text)) => ServerEvent::Rejected {
                command_seq: Some(message.seq),
                code,
                message: text,
            },
        };
        self.emit(out, event);
    }

    fn next_oracle_seed(&mut self) -> u64 {
        self.draws += 1;
        derive_seed(self.settings.oracle.seed, 2, self.draws)
    }

    /// Validates fully before mutating, so a rejection leaves the state unchanged.
    fn try_command(&mut self, cmd: &ClientCommand) -> Result<(), Rejection> {
        let mode = self.mode();
        let bad_mode = |what: &str| Err((ErrorCode::BadMode, format!("{what} not allowed while {mode:?}").to_lowercase()));
        match cmd {
            ClientCommand::ClickGoal { pixel } => {
                if !matches!(mode, Mode::Idle | Mode::Navigating) {
                    return bad_mode("click_goal");
                }
                let target = self.scenario.target_point(pixel).map_err(|e| match e {
                    TaskError::GoalOffRetina => (ErrorCode::GoalOffRetina, e.to_string()),
                    other => (ErrorCode::BadPayload, other.to_string()),
                })?;
                let oracle_cfg = OracleConfig {
                    seed: self.next_oracle_seed(),
                    ..self.settings.oracle
                };
                let oracle = PerceptionOracle::new(self.settings.bins, oracle_cfg).map_err(internal)?;
                let navigator = Navigator::new(
                    *pixel,
                    self.settings.cost_for(&self.scenario, None),
                    self.settings.solver,
                    self.settings.nav,
                    oracle,
                );
                self.activity = Activity::Navigate(Box::new(NavigationRun {
                    navigator,
                    target,
                    sclera: vec![self.sclera_residual()],
                    start_steps: self.sim.steps,
                }));
            }
            ClientCommand::SetWeights {
                sclera_weight,
                collision_weight,
                replan_hz,
            } => {
                let mut cost = self.settings.cost.clone();
                cost.sclera_weight = sclera_weight.unwrap_or(cost.sclera_weight);
                cost.collision_weight = collision_weight.unwrap_or(cost.collision_weight);
                cost.validate().map_err(|e| (ErrorCode::BadPayload, e.to_string()))?;
                let hz = replan_hz.unwrap_or(self.settings.nav.replan_hz);
                if !(hz > 0.0 && hz.is_finite()) {
                    return Err((ErrorCode::BadPayload, "replan_hz must be positive".into()));
                }
                self.settings.cost = cost;
                self.settings.nav.replan_hz = hz;
                let bound = self.settings.cost_for(&self.scenario, None);
                if let Activity::Navigate(run) = &mut self.activity {
                    run.navigator.set_cost(bound);
                }
            }
            ClientCommand::StartLocalization { samples } => {
                if mode != Mode::Idle {
                    return bad_mode("start_localization");
                }
                if !(4..=MAX_LOCALIZATION_SAMPLES).contains(samples) {
                    return Err((
                        ErrorCode::BadPayload,
                        format!("samples must be in 4..={MAX_LOCALIZATION_SAMPLES}"),
                    ));
                }
                let cols = (*samples as f64).sqrt().ceil() as usize;
                let rows = samples.div_ceil(cols);
                let mut pixels = PixelGrid::localization(cols, rows).pixels(&self.scenario.camera, &self.scenario.eye_pixel());
                pixels.truncate(*samples);
                let oracle_seed = self.next_oracle_seed();
                self.activity = Activity::Localize { pixels, oracle_seed };
            }
            ClientCommand::SetVesselPath { pixels, hover_offset_mm } => {
                if mode != Mode::Idle {
                    return bad_mode("set_vessel_path");
                }
                let Some(fit) = self.fit.clone() else {
                    return Err((ErrorCode::BadMode, "no fitted eye; run localization first".into()));
                };
                let offset = hover_offset_mm.unwrap_or(self.config.vessel.hover_offset_mm);
                let path = VesselPath::new(pixels.clone(), offset).map_err(|e| (ErrorCode::BadPayload, e.to_string()))?;
                let plan = plan_vessel(
                    &self.scenario,
                    &self.sim.state,
                    &path,
                    &fit,
                    &self.settings,
                    &self.config.vessel.schedule,
                )
                .map_err(|e| match e {
                    TaskError::PathOffRetina(_) | TaskError::GoalOffRetina => (ErrorCode::GoalOffRetina, e.to_string()),
                    other => (ErrorCode::Internal, other.to_string()),
                })?;
                self.activity = Activity::Vessel(Box::new(VesselRun {
                    plan,
                    fit,
                    executed: vec![self.sim.state],
                }));
            }
            ClientCommand::Pause => {
                if self.paused {
                    return Err((ErrorCode::BadMode, "already paused".into()));
                }
                self.paused = true;
            }
            ClientCommand::Resume => {
                if !self.paused {
                    return Err((ErrorCode::BadMode, "not paused".into()));
                }
                self.paused = false;
            }
            ClientCommand::Reset => {
                self.activity = Activity::Idle;
                self.fit = None;
                self.paused = false;
                self.pending_benchmark = None;
                self.sim.state = self.scenario.initial_state();
            }
            ClientCommand::RunBenchmark { goals, seed } => {
                if mode != Mode::Idle || self.pending_benchmark.is_some() {
                    return bad_mode("run_benchmark");
                }
                if !(1..=MAX_BENCHMARK_GOALS).contains(goals) {
                    return Err((ErrorCode::BadPayload, format!("goals must be in 1..={MAX_BENCHMARK_GOALS}")));
                }
                self.pending_benchmark = Some((*goals, *seed));
            }
        }
        Ok(())
    }

    fn sclera_residual(&self) -> f64 {
        let cost = &self.settings.cost;
        sclera_residual_with(&self.sim.state, &self.scenario.sclera_point, cost.sclera_projector).norm()
    }

    fn advance(&mut self, out: &mut Vec<ServerMessage>) {
        self.tick += 1;
        if let Some((goals, seed)) = self.pending_benchmark.take() {
            let pixels = PixelGrid::navigation(goals).pixels(&self.scenario.camera, &self.scenario.eye_pixel());
            match run_navigation_benchmark(&self.scenario, &pixels, &self.settings, seed) {
                Ok(report) => self.emit(out, ServerEvent::BenchmarkComplete { report }),
                Err(e) => self.emit(out, internal_error(&e)),
            }
        }
        if !self.paused {
            let activity = std::mem::replace(&mut self.activity, Activity::Idle);
            self.activity = match self.step_activity(activity, out) {
                Ok(next) => next,
                Err(e) => {
                    self.emit(out, internal_error(&e));
                    Activity::Idle
                }
            };
        }
        let event = self.state_tick();
        self.emit(out, event);
    }

    fn step_activity(&mut self, activity: Activity, out: &mut Vec<ServerMessage>) -> Result<Activity, TaskError> {
        match activity {
            Activity::Idle => Ok(Activity::Idle),
            Activity::Navigate(mut run) => {
                let step = run
                    .navigator
                    .step_with_budget(&mut self.sim, &self.scenario, Some(self.budget))?;
                run.sclera.push(self.sclera_residual());
                if step.replanned {
                    if let Some(r) = run.navigator.last_solve() {
                        if !r.converged && r.iterations >= self.budget {
                            let (iterations, budget) = (r.iterations, self.budget);
                            self.emit(out, ServerEvent::Latency { iterations, budget });
                        }
                    }
                }
                if step.phase != NavPhase::Reached {
                    return Ok(Activity::Navigate(run));
                }
                let entry = GoalEntry::landed(
                    0,
                    &run.navigator.goal(),
                    &run.target,
                    &self.sim.state.position,
                    &self.scenario.camera,
                    &run.sclera,
                    run.navigator.replans(),
                    run.navigator.solver_iterations(),
                    self.sim.steps - run.start_steps,
                );
                self.emit(out, ServerEvent::GoalReached { entry });
                Ok(Activity::Idle)
            }
            Activity::Localize { pixels, oracle_seed } => {
                let settings = TaskSettings {
                    oracle: OracleConfig {
                        seed: oracle_seed,
                        ..self.settings.oracle
                    },
                    ..self.settings.clone()
                };
                let (fit, report) = run_localization(
                    &self.scenario,
                    &self.sim.state,
                    &pixels,
                    &settings,
                    &self.config.localization.ransac,
                )?;
                let entry = report.localization.expect("localization report has an entry");
                self.emit(
                    out,
                    ServerEvent::FitUpdate {
                        center: fit.eye.center,
                        radius: fit.eye.radius,
                        entry,
                    },
                );
                self.fit = Some(fit);
                Ok(Activity::Idle)
            }
            Activity::Vessel(mut run) => {
                let k = run.executed.len() - 1;
                if let Some(u) = run.plan.planned.controls.get(k) {
                    self.sim.step(u)?;
                    run.executed.push(self.sim.state);
                }
                if run.executed.len() <= run.plan.planned.controls.len() {
                    return Ok(Activity::Vessel(run));
                }
                let entry = run.plan.entry(&self.scenario, &run.fit, &run.executed);
                self.emit(out, ServerEvent::VesselComplete { entry });
                Ok(Activity::Idle)
            }
        }
    }

    fn state_tick(&self) -> ServerEvent {
        let x = &self.sim.state;
        let (plan, goal, phase, replans) = match &self.activity {
            Activity::Navigate(run) => {
                let n = &run.navigator;
                (n.plan_preview(), Some(n.goal()), Some(n.phase()), n.replans())
            }
            Activity::Vessel(run) => {
                let states = &run.plan.planned.states;
                (&states[(run.executed.len() - 1).min(states.len() - 1)..], None, None, 0)
            }
            _ => (&[][..], None, None, 0),
        };
        ServerEvent::StateTick {
            tick: self.tick,
            mode: self.mode(),
            paused: self.paused,
            tip: x.position,
            tool_axis: x.tool_axis(),
            shadow: project_shadow(&x.position, &self.scenario.light_direction, &self.scenario.true_eye).ok(),
            plan_preview: preview(plan),
            sclera_residual_mm: self.sclera_residual(),
            goal,
            phase,
            replans,
        }
    }
}

/// Evenly subsampled positions, always keeping the last.
fn preview(states: &[ToolState]) -> Vec<Vec3> {
    if states.is_empty() {
        return Vec::new();
    }
    let stride = states.len().div_ceil(PREVIEW_POINTS - 1).max(1);
    let mut pts: Vec<Vec3> = states.iter().step_by(stride).map(|s| s.position).collect();
    let last = states[states.len() - 1].position;
    if pts.last() != Some(&last) {
        pts.push(last);
    }
    pts
}

fn internal(e: impl std::fmt::Display) -> Rejection {
    (ErrorCode::Internal, e.to_string())
}

fn internal_error(e: &TaskError) -> ServerEvent {
    let code = match e {
        TaskError::GoalOffRetina | TaskError::PathOffRetina(_) => ErrorCode::GoalOffRetina,
        _ => ErrorCode::Internal,
    };
    ServerEvent::Error {
        code,
        message: e.to_string(),
    }
}
