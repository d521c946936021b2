//! Ground-truth data generator: continuous-time single-track chassis with
//! steering-linkage and servo dynamics, integrated with RK4 and driven in
//! closed loop with PRBS-superimposed steering commands.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{dead_zone, prbs, Dataset};

/// Single-track chassis parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChassisParams {
    /// Mass \[kg\].
    pub m: f64,
    /// Yaw inertia \[kg m^2\].
    pub i_z: f64,
    /// Front axle to CoG \[m\].
    pub l_f: f64,
    /// Rear axle to CoG \[m\].
    pub l_r: f64,
    /// Front cornering stiffness \[N/rad\].
    pub c_f: f64,
    /// Rear cornering stiffness \[N/rad\].
    pub c_r: f64,
}

impl Default for ChassisParams {
    fn default() -> Self {
        // Nominal compact EV; configuration values, not measured ones.
        ChassisParams {
            m: 1580.0,
            i_z: 2130.0,
            l_f: 1.19,
            l_r: 1.51,
            c_f: 65_000.0,
            c_r: 72_000.0,
        }
    }
}

/// Steering linkage and tire-contact parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringParams {
    /// Aggregated steering inertia \[kg m^2\].
    pub theta_delta: f64,
    /// Aggregated damping \[N m s/rad\].
    pub d_delta: f64,
    /// Linkage ratio.
    pub i_l: f64,
    /// Dry friction force magnitude \[N\].
    pub f_sr: f64,
    /// Nominal pneumatic trail \[m\].
    pub trail_n0: f64,
    /// Steering angle where the trail crosses zero \[rad\].
    pub trail_delta_crit: f64,
    /// Low-speed tire-pavement friction torque ceiling \[N m\].
    pub t_b_max: f64,
    /// Speed scale for the friction fade \[m/s\].
    pub v_b: f64,
}

impl Default for SteeringParams {
    fn default() -> Self {
        SteeringParams {
            theta_delta: 8.0,
            d_delta: 300.0,
            i_l: 15.0,
            f_sr: 120.0,
            trail_n0: 0.04,
            trail_delta_crit: 0.35,
            t_b_max: 20.0,
            v_b: 1.0,
        }
    }
}

/// Servo path: dead-zone, gain, saturation, first-order lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoParams {
    pub dz_low: f64,
    pub dz_high: f64,
    /// Torque per unit command \[N m\].
    pub gain: f64,
    /// First-order lag time constant \[s\].
    pub tau_servo: f64,
    /// Torque saturation \[N m\].
    pub t_max: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        ServoParams {
            dz_low: -0.13,
            dz_high: 0.17,
            gain: 120.0,
            tau_servo: 0.05,
            t_max: 250.0,
        }
    }
}

/// Full plant parameter set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimParams {
    pub chassis: ChassisParams,
    pub steering: SteeringParams,
    pub servo: ServoParams,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let c = &self.chassis;
        if c.m <= 0.0 || c.i_z <= 0.0 || c.l_f <= 0.0 || c.l_r <= 0.0 || c.c_f <= 0.0 || c.c_r <= 0.0 {
            return Err(Error::InvalidArgument("chassis parameters must be strictly positive".into()));
        }
        let s = &self.steering;
        if s.theta_delta <= 0.0 || s.d_delta <= 0.0 || s.i_l <= 0.0 || s.trail_delta_crit <= 0.0 || s.v_b <= 0.0 {
            return Err(Error::InvalidArgument("steering parameters out of range".into()));
        }
        if s.f_sr < 0.0 || s.t_b_max < 0.0 || s.trail_n0 < 0.0 {
            return Err(Error::InvalidArgument("steering magnitudes must be non-negative".into()));
        }
        let v = &self.servo;
        if v.dz_low > 0.0 || v.dz_high < 0.0 || v.gain <= 0.0 || v.tau_servo <= 0.0 || v.t_max <= 0.0 {
            return Err(Error::InvalidArgument("servo parameters out of range".into()));
        }
        Ok(())
    }
}

/// Continuous-time plant state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    pub v_x: f64,
    pub v_y: f64,
    pub r: f64,
    pub delta: f64,
    pub delta_dot: f64,
    pub t_servo: f64,
}

impl SimState {
    fn to_array(self) -> [f64; 6] {
        [self.v_x, self.v_y, self.r, self.delta, self.delta_dot, self.t_servo]
    }

    fn from_array(a: [f64; 6]) -> Self {
        SimState { v_x: a[0], v_y: a[1], r: a[2], delta: a[3], delta_dot: a[4], t_servo: a[5] }
    }
}

/// Colored measurement noise on the yaw rate: an all-pole filter driven by
/// white Gaussian noise of std `sigma_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma_e: f64,
    pub ar_coeffs: Vec<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma_e: 0.002, ar_coeffs: alloc::vec![0.9] }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel { sigma_e: 0.0, ar_coeffs: Vec::new() }
    }

    /// Poles of the coloring filter must lie strictly inside the unit circle.
    pub fn validate(&self) -> Result<()> {
        if self.sigma_e < 0.0 {
            return Err(Error::InvalidArgument("sigma_e must be non-negative".into()));
        }
        let p = self.ar_coeffs.len();
        if p == 0 {
            return Ok(());
        }
        let mut companion = DMatrix::zeros(p, p);
        for (j, &a) in self.ar_coeffs.iter().enumerate() {
            companion[(0, j)] = a;
        }
        for i in 1..p {
            companion[(i, i - 1)] = 1.0;
        }
        let eigs = companion.complex_eigenvalues();
        for e in eigs.iter() {
            if libm::sqrt(e.norm_sqr()) >= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "coloring filter pole at modulus {:.4} is not stable",
                    libm::sqrt(e.norm_sqr())
                )));
            }
        }
        Ok(())
    }

    fn generate(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut x = self.sigma_e * rng.gauss();
            for (i, &a) in self.ar_coeffs.iter().enumerate() {
                if k > i {
                    x += a * out[k - 1 - i];
                }
            }
            out.push(x);
        }
        out
    }
}

/// Front and rear wheel slip angles.
pub fn slip_angles(s: &SimState, p: &ChassisParams) -> Result<(f64, f64)> {
    if s.v_x <= 0.0 {
        return Err(Error::Domain(format!("slip angles undefined for v_x = {} <= 0", s.v_x)));
    }
    let alpha_f = s.delta - libm::atan((s.v_y + s.r * p.l_f) / s.v_x);
    let alpha_r = -libm::atan((s.v_y - s.r * p.l_r) / s.v_x);
    Ok((alpha_f, alpha_r))
}

/// Chassis state derivatives `(dv_x, dv_y, dr)` under the linear tire law.
pub fn chassis_derivatives(s: &SimState, f_xr: f64, p: &ChassisParams) -> Result<(f64, f64, f64)> {
    let (alpha_f, alpha_r) = slip_angles(s, p)?;
    let f_yf = p.c_f * alpha_f;
    let f_yr = p.c_r * alpha_r;
    let (sin_d, cos_d) = (libm::sin(s.delta), libm::cos(s.delta));
    let dv_x = (f_xr - f_yf * sin_d + p.m * s.v_y * s.r) / p.m;
    let dv_y = (f_yr + f_yf * cos_d - p.m * s.v_x * s.r) / p.m;
    let dr = (f_yf * p.l_f * cos_d - f_yr * p.l_r) / p.i_z;
    Ok((dv_x, dv_y, dr))
}

/// Pneumatic trail, linear in |delta| with a zero crossing at
/// `trail_delta_crit`.
pub fn pneumatic_trail(delta: f64, _v: f64, p: &SteeringParams) -> f64 {
    p.trail_n0 * (1.0 - libm::fabs(delta) / p.trail_delta_crit)
}

/// Smooth low-speed tire-pavement friction torque opposing the steering rate,
/// fading exponentially with speed.
pub fn tire_friction_torque(delta_dot: f64, v: f64, p: &SteeringParams) -> f64 {
    -p.t_b_max * libm::exp(-v / p.v_b) * libm::tanh(delta_dot / 0.01)
}

/// Aligning torque acting on the steering linkage.
///
/// For positive trail the lateral force re-centers the wheels; once the trail
/// crosses zero at large angles the same force drives them further out (the
/// second stability region).
pub fn aligning_torque(delta: f64, f_yf: f64, v: f64, p: &SteeringParams) -> f64 {
    -pneumatic_trail(delta, v, p) * f_yf
}

fn smooth_sign(x: f64) -> f64 {
    libm::tanh(x / 0.001)
}

/// Steering derivatives `(ddelta, ddelta_dot)`.
///
/// `sign(delta)` is smoothed as `tanh(delta / 0.001)` to keep the integrator
/// order.
pub fn steering_derivatives(
    s: &SimState,
    t_mot: f64,
    f_yf: f64,
    v: f64,
    p: &SteeringParams,
) -> (f64, f64) {
    let t_l = aligning_torque(s.delta, f_yf, v, p) + tire_friction_torque(s.delta_dot, v, p);
    let friction = smooth_sign(s.delta) * p.f_sr / p.i_l;
    let ddelta_dot = (-s.delta_dot * p.d_delta + t_mot + t_l - friction) / p.theta_delta;
    (s.delta_dot, ddelta_dot)
}

/// First-order servo lag toward the dead-zoned, saturated torque command.
pub fn servo_torque_derivative(u_s: f64, t_servo: f64, p: &ServoParams) -> f64 {
    let dz = dead_zone(u_s, p.dz_low, p.dz_high).unwrap_or(0.0);
    let cmd = (p.gain * dz).clamp(-p.t_max, p.t_max);
    (cmd - t_servo) / p.tau_servo
}

/// Full coupled state derivative.
pub fn plant_derivatives(s: &SimState, u_s: f64, f_xr: f64, p: &SimParams) -> Result<[f64; 6]> {
    let (dv_x, dv_y, dr) = chassis_derivatives(s, f_xr, &p.chassis)?;
    let (alpha_f, _) = slip_angles(s, &p.chassis)?;
    let f_yf = p.chassis.c_f * alpha_f;
    let v = libm::sqrt(s.v_x * s.v_x + s.v_y * s.v_y);
    let (ddelta, ddelta_dot) = steering_derivatives(s, s.t_servo, f_yf, v, &p.steering);
    let dt_servo = servo_torque_derivative(u_s, s.t_servo, &p.servo);
    Ok([dv_x, dv_y, dr, ddelta, ddelta_dot, dt_servo])
}

/// One classical 4th-order Runge-Kutta step of a generic ODE.
pub fn rk4_step<const N: usize, F>(f: F, y: &[f64; N], dt: f64) -> Result<[f64; N]>
where
    F: Fn(&[f64; N]) -> Result<[f64; N]>,
{
    let k1 = f(y)?;
    let mut y2 = *y;
    for i in 0..N {
        y2[i] = y[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&y2)?;
    for i in 0..N {
        y2[i] = y[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&y2)?;
    for i in 0..N {
        y2[i] = y[i] + dt * k3[i];
    }
    let k4 = f(&y2)?;
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// RK4 step of the full plant with inputs held constant over the step.
pub fn step_rk4(s: &SimState, inputs: (f64, f64), dt: f64, p: &SimParams) -> Result<SimState> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (u_s, f_xr) = inputs;
    let next = rk4_step(
        |y: &[f64; 6]| plant_derivatives(&SimState::from_array(*y), u_s, f_xr, p),
        &s.to_array(),
        dt,
    )?;
    let out = SimState::from_array(next);
    if out.v_x <= 0.0 {
        return Err(Error::Domain(format!(
            "v_x crossed zero during integration (v_x = {} after step)",
            out.v_x
        )));
    }
    Ok(out)
}

/// Continuous-time small-angle linearization around straight driving at
/// constant speed `v_x0`, dry friction neglected.
///
/// State order: `[v_y, r, delta, delta_dot, t_servo]`. The servo input is
/// taken inside the dead-zone so the input matrix is zero; use initial
/// conditions to excite the plant.
pub fn linearize(p: &SimParams, v_x0: f64) -> DMatrix<f64> {
    let c = &p.chassis;
    let st = &p.steering;
    let mut a = DMatrix::zeros(5, 5);
    // alpha_f = delta - (v_y + l_f r)/v_x0, alpha_r = -(v_y - l_r r)/v_x0.
    let af = [-1.0 / v_x0, -c.l_f / v_x0, 1.0, 0.0, 0.0];
    let ar = [-1.0 / v_x0, c.l_r / v_x0, 0.0, 0.0, 0.0];
    for j in 0..5 {
        a[(0, j)] = (c.c_r * ar[j] + c.c_f * af[j]) / c.m;
        a[(1, j)] = (c.l_f * c.c_f * af[j] - c.l_r * c.c_r * ar[j]) / c.i_z;
        // Aligning torque: -n0 * c_f * alpha_f at small angles.
        a[(3, j)] = -st.trail_n0 * c.c_f * af[j] / st.theta_delta;
    }
    a[(0, 1)] -= v_x0;
    a[(2, 3)] = 1.0;
    // Damping plus the linearized low-speed friction slope.
    let friction_slope = st.t_b_max * libm::exp(-v_x0 / st.v_b) / 0.01;
    a[(3, 3)] += -(st.d_delta + friction_slope) / st.theta_delta;
    a[(3, 4)] = 1.0 / st.theta_delta;
    a[(4, 4)] = -1.0 / p.servo.tau_servo;
    a
}

/// Reference-path curvature profile of a closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum CurvatureProfile {
    Constant(f64),
    /// `amplitude * sin(2 pi t / period)`.
    Slalom { amplitude: f64, period: f64 },
    /// Piecewise constant `(t_start, curvature)` segments, sorted by time.
    Segments(Vec<(f64, f64)>),
}

impl CurvatureProfile {
    pub fn curvature(&self, t: f64) -> f64 {
        match self {
            CurvatureProfile::Constant(k) => *k,
            CurvatureProfile::Slalom { amplitude, period } => {
                amplitude * libm::sin(2.0 * core::f64::consts::PI * t / period)
            }
            CurvatureProfile::Segments(segs) => segs
                .iter()
                .take_while(|(t0, _)| *t0 <= t)
                .last()
                .map(|(_, k)| *k)
                .unwrap_or(0.0),
        }
    }
}

/// Declarative description of one closed-loop experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: String,
    pub target_speed: f64,
    pub duration: f64,
    pub prbs_amplitude: f64,
    pub prbs_band_hz: f64,
    pub path: CurvatureProfile,
    /// Integration step \[s\].
    pub dt: f64,
    /// Output sampling rate \[Hz\].
    pub sample_hz: f64,
    /// Steering tracker PI gains and failure bound.
    pub steer_kp: f64,
    pub steer_ki: f64,
    pub steer_err_max: f64,
    /// Speed PI gains.
    pub speed_kp: f64,
    pub speed_ki: f64,
}

impl ExperimentSpec {
    pub fn new(id: impl Into<String>, target_speed: f64, duration: f64) -> Self {
        ExperimentSpec {
            id: id.into(),
            target_speed,
            duration,
            prbs_amplitude: 0.3,
            prbs_band_hz: 10.0 / (2.0 * core::f64::consts::PI),
            path: CurvatureProfile::Constant(0.0),
            dt: 1e-3,
            sample_hz: 50.0,
            steer_kp: 8.0,
            steer_ki: 10.0,
            steer_err_max: 0.6,
            speed_kp: 2000.0,
            speed_ki: 500.0,
        }
    }

    pub fn with_path(mut self, path: CurvatureProfile) -> Self {
        self.path = path;
        self
    }

    pub fn with_prbs(mut self, amplitude: f64, band_hz: f64) -> Self {
        self.prbs_amplitude = amplitude;
        self.prbs_band_hz = band_hz;
        self
    }
}

/// Hidden-state record sampled alongside a dataset, for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub t: Vec<f64>,
    pub v_x: Vec<f64>,
    pub v_y: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta_dot: Vec<f64>,
}

/// A finished experiment: the measurable record plus the hidden-state truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub dataset: Dataset,
    pub truth: TruthRecord,
}

/// Run one closed-loop experiment.
///
/// A curvature-feedforward steering reference with a PI torque loop tracks
/// the path while holding the target speed with a longitudinal PI loop; the
/// PRBS rides on top of the nominal command. The plant is integrated at
/// `spec.dt` and sampled at `spec.sample_hz`; the recorded yaw rate carries
/// the colored measurement noise.
pub fn run_experiment(
    spec: &ExperimentSpec,
    params: &SimParams,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Experiment> {
    params.validate()?;
    noise.validate()?;
    if spec.duration <= 0.0 || spec.target_speed <= 0.0 {
        return Err(Error::InvalidArgument(
            "experiment needs positive duration and target speed".into(),
        ));
    }
    let t_s = 1.0 / spec.sample_hz;
    let n_samples = libm::round(spec.duration * spec.sample_hz) as usize;
    let steps_per_sample = libm::round(t_s / spec.dt) as usize;
    let excitation = prbs(n_samples, spec.prbs_band_hz, spec.prbs_amplitude, t_s, seed)?;
    let mut noise_rng = Rng::new(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let colored = noise.generate(n_samples, &mut noise_rng);

    let wheelbase = params.chassis.l_f + params.chassis.l_r;
    let mut state = SimState { v_x: spec.target_speed, ..SimState::default() };
    let mut steer_integ = 0.0;
    let mut speed_integ = 0.0;

    let mut t = Vec::with_capacity(n_samples);
    let mut u_s_rec = Vec::with_capacity(n_samples);
    let mut v_rec = Vec::with_capacity(n_samples);
    let mut r_rec = Vec::with_capacity(n_samples);
    let mut truth = TruthRecord {
        t: Vec::with_capacity(n_samples),
        v_x: Vec::with_capacity(n_samples),
        v_y: Vec::with_capacity(n_samples),
        delta: Vec::with_capacity(n_samples),
        delta_dot: Vec::with_capacity(n_samples),
    };

    for k in 0..n_samples {
        let now = k as f64 * t_s;
        let delta_ref = libm::atan(wheelbase * spec.path.curvature(now));
        let err = delta_ref - state.delta;
        if libm::fabs(err) > spec.steer_err_max {
            return Err(Error::ExperimentFailure {
                time: now,
                reason: format!(
                    "steering tracking error {:.3} rad exceeded bound {:.3} in {}",
                    err, spec.steer_err_max, spec.id
                ),
            });
        }
        steer_integ = (steer_integ + err * t_s).clamp(-2.0, 2.0);
        let u_s = spec.steer_kp * err + spec.steer_ki * steer_integ + excitation[k];

        let speed_err = spec.target_speed - state.v_x;
        speed_integ = (speed_integ + speed_err * t_s).clamp(-10.0, 10.0);
        let f_xr = spec.speed_kp * speed_err + spec.speed_ki * speed_integ;

        let v_abs = libm::sqrt(state.v_x * state.v_x + state.v_y * state.v_y);
        t.push(now);
        u_s_rec.push(u_s);
        v_rec.push(v_abs);
        r_rec.push(state.r + colored[k]);
        truth.t.push(now);
        truth.v_x.push(state.v_x);
        truth.v_y.push(state.v_y);
        truth.delta.push(state.delta);
        truth.delta_dot.push(state.delta_dot);

        for _ in 0..steps_per_sample {
            state = step_rk4(&state, (u_s, f_xr), spec.dt, params).map_err(|e| match e {
                Error::Domain(msg) => Error::ExperimentFailure {
                    time: now,
                    reason: format!("{msg} in {}", spec.id),
                },
                other => other,
            })?;
        }
    }

    let dataset = Dataset::new(spec.id.clone(), t, u_s_rec, v_rec, r_rec, t_s)?;
    Ok(Experiment { dataset, truth })
}
