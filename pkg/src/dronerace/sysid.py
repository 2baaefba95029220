"""Flight-log ingestion and model identification.

Offline pipeline behind the modeling work: extract residual thrust/moment
targets from logged flight data, fit the residual correction nets, estimate
first-order delay constants and drag coefficients, and produce per-channel
modeled-vs-measured error reports for the actuator-delay models.

Flight-log CSV schema: one header row with column names, one units row,
then data rows. Columns, in order:

    t[s]
    px py pz          world position, m (NED)
    vx vy vz          world velocity, m/s
    phi theta psi     ZYX Euler angles, rad
    p q r             body rates, rad/s
    ax ay az          accelerometer specific force, body frame, m/s^2
    rpm1..rpm4        measured propeller speeds, RPM
    rpm1_cmd..rpm4_cmd  commanded propeller speeds, RPM
    p_cmd q_cmd r_cmd   commanded body rates, rad/s
    thrust_cmd          commanded mass-normalized thrust, m/s^2

Derivative estimation (for body-rate and prop-speed accelerations) is
second-order central differences followed by a zero-phase smoothing filter
(two passes of a centered moving average, window 5 by default); holdout
splits are contiguous time blocks to avoid temporal leakage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neuralnet as nn
from .dynamics_e2e import (
    NominalParams,
    ResidualNets,
    _moment_net_norm,
    _thrust_net_norm,
    nominal_force,
    nominal_moment,
)
from .dynamics_indi import IndiParams
from .mathcore import euler_to_rotmat

COLUMNS = (
    ["t", "px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi",
     "p", "q", "r", "ax", "ay", "az"]
    + [f"rpm{i}" for i in range(1, 5)]
    + [f"rpm{i}_cmd" for i in range(1, 5)]
    + ["p_cmd", "q_cmd", "r_cmd", "thrust_cmd"]
)

UNITS = (
    ["s"] + ["m"] * 3 + ["m/s"] * 3 + ["rad"] * 3 + ["rad/s"] * 3
    + ["m/s2"] * 3 + ["rpm"] * 8 + ["rad/s"] * 3 + ["m/s2"]
)


class FlightLogError(ValueError):
    """Malformed flight-log file (schema, monotonicity, rate jitter)."""


class IdentificationError(ValueError):
    """Estimation impossible on this data (degenerate or unexcited)."""


@dataclass
class FlightLog:
    """Uniform-rate flight log; see module docstring for channel meanings."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    Omega: np.ndarray
    acc_body: np.ndarray
    rpm: np.ndarray
    rpm_cmd: np.ndarray
    rate_cmd: np.ndarray
    thrust_cmd: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        shapes = {
            "p": (n, 3), "v": (n, 3), "lam": (n, 3), "Omega": (n, 3),
            "acc_body": (n, 3), "rpm": (n, 4), "rpm_cmd": (n, 4),
            "rate_cmd": (n, 3), "thrust_cmd": (n,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise FlightLogError(f"{name} must have shape {shape}, "
                                     f"got {arr.shape}")
        dt = np.diff(self.t)
        if np.any(dt <= 0):
            row = int(np.flatnonzero(dt <= 0)[0]) + 1
            raise FlightLogError(f"timestamps not strictly increasing at row {row}")
        if len(dt) and (dt.max() - dt.min()) > 0.01 * dt.mean():
            raise FlightLogError(
                f"sample rate varies by more than 1% "
                f"(dt range [{dt.min():.6g}, {dt.max():.6g}])"
            )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.mean(np.diff(self.t)))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def v_body(self) -> np.ndarray:
        """World velocity rotated into the body frame per sample."""
        R = euler_to_rotmat(self.lam)
        return np.einsum("nji,nj->ni", R, self.v)

    def to_matrix(self) -> np.ndarray:
        return np.column_stack([
            self.t, self.p, self.v, self.lam, self.Omega, self.acc_body,
            self.rpm, self.rpm_cmd, self.rate_cmd, self.thrust_cmd,
        ])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "FlightLog":
        if m.ndim != 2 or m.shape[1] != len(COLUMNS):
            raise FlightLogError(
                f"expected {len(COLUMNS)} columns, got {m.shape}")
        return cls(
            t=m[:, 0], p=m[:, 1:4], v=m[:, 4:7], lam=m[:, 7:10],
            Omega=m[:, 10:13], acc_body=m[:, 13:16], rpm=m[:, 16:20],
            rpm_cmd=m[:, 20:24], rate_cmd=m[:, 24:27], thrust_cmd=m[:, 27],
        )

    def save(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            w.writerow(UNITS)
            for row in self.to_matrix():
                w.writerow([repr(float(x)) for x in row])


def load_flight_log(path) -> FlightLog:
    """Read and validate a flight-log CSV (see module docstring schema)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
            units = next(reader)
        except StopIteration:
            raise FlightLogError(f"{path}: missing header/units rows") from None
        if [h.strip() for h in header] != COLUMNS:
            raise FlightLogError(
                f"{path}: header mismatch; expected {COLUMNS[:4]}..., "
                f"got {header[:4]}..."
            )
        rows = []
        for i, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise FlightLogError(
                    f"{path}: row {i} has {len(row)} fields, "
                    f"expected {len(COLUMNS)}"
                )
            try:
                rows.append([float(x) for x in row])
            except ValueError as e:
                raise FlightLogError(f"{path}: row {i}: {e}") from None
    if not rows:
        raise FlightLogError(f"{path}: no data rows")
    return FlightLog.from_matrix(np.array(rows))


def smoothed_derivative(y: np.ndarray, dt: float, window: int = 5,
                        passes: int = 2) -> np.ndarray:
    """Second-order finite differences plus zero-phase moving-average passes.

    Central differences on interior samples, one-sided second-order stencils
    at the ends; then `passes` applications of a centered length-`window`
    moving average (edges padded by replication). Works column-wise on 2-D
    input.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        raise ValueError("need at least 3 samples to differentiate")
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
    d[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)

    if window > 1:
        kernel = np.ones(window) / window
        pad = window // 2
        for _ in range(passes):
            padded = np.concatenate([
                np.repeat(d[:1], pad, axis=0), d, np.repeat(d[-1:], pad, axis=0)
            ])
            if d.ndim == 1:
                d = np.convolve(padded, kernel, mode="valid")
            else:
                d = np.stack([
                    np.convolve(padded[:, j], kernel, mode="valid")
                    for j in range(d.shape[1])
                ], axis=1)
    return d


@dataclass
class ResidualDataset:
    """Per-sample inputs and residual targets for the correction nets."""

    omega: np.ndarray          # (N, 4) measured RPM
    v_body: np.ndarray         # (N, 3)
    Omega: np.ndarray          # (N, 3)
    thrust_target: np.ndarray  # (N,) residual specific thrust
    moment_target: np.ndarray  # (N, 3) residual moment

    def __post_init__(self):
        n = len(self.omega)
        if not (len(self.v_body) == len(self.Omega) == len(self.thrust_target)
                == len(self.moment_target) == n):
            raise ValueError("input/target row counts differ")
        for name in ("omega", "v_body", "Omega", "thrust_target",
                     "moment_target"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    def __len__(self) -> int:
        return len(self.omega)

    def thrust_inputs(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v_body], axis=1)

    def moment_inputs(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v_body, self.Omega], axis=1)


def residual_targets(log: FlightLog, params: NominalParams,
                     window: int = 5, passes: int = 2) -> ResidualDataset:
    """Residual force/moment targets implied by a log and the nominal model.

    Thrust target: the specific thrust missing from the nominal model,
    nominal_z - measured_z (positive = the vehicle produced more upward
    thrust than modeled). Moment target: I*Omega_dot + Omega x I*Omega
    minus the nominal moment, with Omega_dot (and the prop accelerations
    entering the nominal yaw term) from smoothed differentiation.
    """
    if log.duration < 1.0:
        raise ValueError(f"log too short ({log.duration:.3f} s < 1 s)")
    v_body = log.v_body()
    F_nom = nominal_force(log.rpm, v_body, params)
    thrust_target = F_nom[:, 2] - log.acc_body[:, 2]

    Om_dot = smoothed_derivative(log.Omega, log.dt, window, passes)
    rpm_dot = smoothed_derivative(log.rpm, log.dt, window, passes)
    I = params.inertia
    M_meas = I * Om_dot + np.cross(log.Omega, I * log.Omega)
    M_nom = nominal_moment(log.rpm, rpm_dot, v_body, log.Omega, params)
    return ResidualDataset(log.rpm.copy(), v_body, log.Omega.copy(),
                           thrust_target, M_meas - M_nom)


def fit_residual_nets(ds: ResidualDataset, epochs: int = 200, lr: float = 1e-3,
                      seed: int = 0, hidden: int = 32, batch_size: int = 256,
                      params: Optional[NominalParams] = None,
                      holdout_frac: float = 0.2):
    """Fit the thrust and moment correction nets on a residual dataset.

    Minibatch Adam on mean squared error; the last `holdout_frac` of the
    rows (a contiguous block) is held out for reporting.

    Returns:
        (ResidualNets, report) where report holds train/holdout MSE and the
        holdout target variance per net.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    params = params or NominalParams()
    rng = np.random.default_rng(seed)
    # start near zero correction: residuals are small by construction
    nets = ResidualNets.random(rng, params, hidden=hidden, final_scale=0.01)

    n_hold = int(round(holdout_frac * len(ds)))
    n_train = len(ds) - n_hold
    if n_train < 1:
        raise ValueError("holdout fraction leaves no training rows")

    report = {}
    jobs = [
        ("thrust", nets.net_thrust, ds.thrust_inputs(), ds.thrust_target[:, None]),
        ("moment", nets.net_moment, ds.moment_inputs(), ds.moment_target),
    ]
    for name, net, X, Y in jobs:
        X_tr, Y_tr = X[:n_train], Y[:n_train]
        X_ho, Y_ho = X[n_train:], Y[n_train:]
        opt = nn.Adam(net.params(), lr)
        for _ in range(epochs):
            order = rng.permutation(n_train)
            for idx in np.array_split(order, max(1, n_train // batch_size)):
                pred = nn.forward(net, X_tr[idx])
                err = pred - Y_tr[idx]
                loss = float(np.mean(err * err))
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"{name} net fit diverged (non-finite loss, lr={lr})")
                gy = 2.0 * err / err.size
                grads, _ = nn.backward(net, X_tr[idx], gy)
                opt.step(net.params(), grads)
        err_tr = nn.forward(net, X_tr) - Y_tr
        report[f"{name}_train_mse"] = float(np.mean(err_tr ** 2))
        if n_hold:
            err_ho = nn.forward(net, X_ho) - Y_ho
            report[f"{name}_holdout_mse"] = float(np.mean(err_ho ** 2))
            report[f"{name}_holdout_var"] = float(np.var(Y_ho))
    return nets, report


def fit_first_order_tau(commanded: np.ndarray, measured: np.ndarray,
                        dt: float):
    """Estimate the time constant of y_dot = (u - y)/tau by least squares.

    Central-difference y_dot regressed (through the origin) on (u - y).

    Returns:
        (tau, r_squared).

    Raises:
        IdentificationError: if the regressor u - y carries (almost) no
            signal, or the fitted slope is not positive.
    """
    u = np.asarray(commanded, dtype=float)
    y = np.asarray(measured, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise ValueError("commanded and measured must be equal-length 1-D")
    if len(u) < 100:
        raise ValueError(f"need >= 100 samples, got {len(u)}")
    ydot = (y[2:] - y[:-2]) / (2.0 * dt)
    x = (u - y)[1:-1]
    sxx = float(x @ x)
    scale = float(np.mean(np.abs(y))) + float(np.mean(np.abs(u))) + 1e-12
    if sxx < (1e-6 * scale) ** 2 * len(x):
        raise IdentificationError(
            "commanded and measured series coincide; delay unidentifiable")
    slope = float(x @ ydot) / sxx
    if slope <= 0:
        raise IdentificationError(
            f"fitted rate constant {slope} not positive; not a stable "
            f"first-order response")
    resid = ydot - slope * x
    ss_tot = float(np.sum((ydot - ydot.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 0.0
    return 1.0 / slope, r2


def fit_drag(log: FlightLog, min_excitation: float = 0.05):
    """Estimate the lateral body-drag coefficients from accelerometer data.

    Regresses measured body x/y specific force on the respective body
    velocity component (slope = -d).

    Returns:
        (d_x, d_y).

    Raises:
        IdentificationError: if a lateral velocity channel has variance
            below `min_excitation` (m/s)^2.
    """
    v_body = log.v_body()
    out = []
    for axis, name in ((0, "x"), (1, "y")):
        vv = v_body[:, axis]
        if float(np.var(vv)) < min_excitation:
            raise IdentificationError(
                f"insufficient lateral excitation on body {name} "
                f"(var={np.var(vv):.4g} < {min_excitation})")
        out.append(-float(vv @ log.acc_body[:, axis]) / float(vv @ vv))
    return tuple(out)


def _simulate_first_order(y0: float, commands: np.ndarray, dt: float,
                          tau: float) -> np.ndarray:
    """Exact zero-order-hold discretization of y_dot = (u - y)/tau."""
    decay = np.exp(-dt / tau)
    y = np.empty(len(commands))
    y[0] = y0
    for k in range(len(commands) - 1):
        y[k + 1] = commands[k] + (y[k] - commands[k]) * decay
    return y


def modeling_error_report(log: FlightLog, kind: str,
                          nominal: Optional[NominalParams] = None,
                          indi: Optional[IndiParams] = None) -> dict:
    """Per-channel measured vs first-order-modeled series for a flight log.

    kind='motor': the four prop speeds against their commands using the
    motor lag constant. kind='indi': body rates against rate commands and
    thrust (read as -accelerometer z) against the thrust command, using the
    inner-loop delay constants.

    Returns:
        {channel: array (N, 4) of [t, measured, modeled, error]}.
    """
    report = {}
    if kind == "motor":
        nominal = nominal or NominalParams()
        for i in range(4):
            measured = log.rpm[:, i]
            modeled = _simulate_first_order(measured[0], log.rpm_cmd[:, i],
                                            log.dt, nominal.tau_motor)
            report[f"rpm{i + 1}"] = np.column_stack(
                [log.t, measured, modeled, measured - modeled])
    elif kind == "indi":
        indi = indi or IndiParams()
        for i, name in enumerate(("p", "q", "r")):
            measured = log.Omega[:, i]
            modeled = _simulate_first_order(measured[0], log.rate_cmd[:, i],
                                            log.dt, indi.tau_omega)
            report[name] = np.column_stack(
                [log.t, measured, modeled, measured - modeled])
        measured_T = -log.acc_body[:, 2]
        modeled_T = _simulate_first_order(measured_T[0], log.thrust_cmd,
                                          log.dt, indi.tau_thrust)
        report["thrust"] = np.column_stack(
            [log.t, measured_T, modeled_T, measured_T - modeled_T])
    else:
        raise ValueError("kind must be 'motor' or 'indi'")
    return report


def save_error_report(report: dict, out_dir) -> list:
    """Write each channel's series as CSV; returns the file paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for channel, series in report.items():
        path = out_dir / f"model_error_{channel}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "measured", "modeled", "error"])
            for row in series:
                w.writerow([repr(float(x)) for x in row])
        paths.append(path)
    return paths
