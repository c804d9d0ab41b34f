"""
Compiled inner loops.

The Langevin integrator uses a BAOAB splitting: half kick, half drift,
exact Ornstein-Uhlenbeck velocity update, half drift, half kick. The IQ
controller recursion lives here too so the closed loop runs inside the
same compiled step.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

# IQ parameter vector: high-pass coefficient, low-pass coefficient, gain,
# demodulation phase (rad), reference phase step (rad), output limit (V)
IQ_PARAM_SIZE = 6
# IQ state vector: previous input, previous high-pass output, I, Q, reference phase
IQ_STATE_SIZE = 5

# energy ledger columns
LEDGER_BATH = 0
LEDGER_FEEDBACK = 1
LEDGER_EXTERNAL = 2
LEDGER_DRIVE = 3
LEDGER_SIZE = 4


@njit(cache=True)
def iq_update(x, state, params):
    """Advance one IQ controller by one sample and return its output voltage."""
    a_hp = params[0]
    alpha = params[1]
    gain = params[2]
    phase = params[3]
    limit = params[5]

    if a_hp < 1.0:
        y_hp = a_hp * (state[1] + x - state[0])
    else:
        y_hp = x
    state[0] = x
    state[1] = y_hp

    theta = state[4]
    c = math.cos(theta)
    s = math.sin(theta)
    state[2] += alpha * (2.0 * y_hp * c - state[2])
    state[3] += alpha * (-2.0 * y_hp * s - state[3])

    out = gain * (state[2] * math.cos(phase + theta) - state[3] * math.sin(phase + theta))
    if out > limit:
        out = limit
    elif out < -limit:
        out = -limit

    state[4] = (theta + params[4]) % TWO_PI
    return out


@njit(cache=True)
def iq_filter_block(samples, state, params, out):
    for n in range(samples.shape[0]):
        out[n] = iq_update(samples[n], state, params)


@njit(cache=True)
def drive_scale(t, drive_drift, decay_rate):
    return 1.0 + drive_drift * math.exp(-t * decay_rate)


@njit(cache=True)
def trap_energy(u, v, t, a, q, omega, mass, drive_drift, decay_rate, out):
    """Per-axis kinetic plus instantaneous trap potential energy."""
    s = drive_scale(t, drive_drift, decay_rate)
    c = math.cos(omega * t)
    for i in range(3):
        out[i] = 0.5 * mass * v[i] * v[i] + 0.125 * mass * omega * omega * (a[i] + 2.0 * q[i] * s * c) * u[i] * u[i]


@njit(cache=True)
def _half_kick(u, v, t, dt, a, q, omega, drive_drift, decay_rate, mass,
               static_acc, stray_acc, tickle_acc, tickle_omega, fb_acc, ledger):
    s = drive_scale(t, drive_drift, decay_rate)
    c = math.cos(omega * t)
    stray = math.exp(-t * decay_rate)
    tickle = math.cos(tickle_omega * t)
    for i in range(3):
        dv_trap = -0.5 * dt * 0.25 * omega * omega * (a[i] + 2.0 * q[i] * s * c) * u[i]
        dv_ext = 0.5 * dt * (static_acc[i] + stray_acc[i] * stray + tickle_acc[i] * tickle)
        dv_fb = 0.5 * dt * fb_acc[i]
        v_old = v[i]
        v[i] = v_old + dv_trap + dv_ext + dv_fb
        vbar = 0.5 * (v_old + v[i])
        ledger[i, LEDGER_DRIVE] += mass * vbar * dv_trap
        ledger[i, LEDGER_FEEDBACK] += mass * vbar * dv_fb
        ledger[i, LEDGER_EXTERNAL] += mass * vbar * dv_ext


@njit(cache=True)
def _stiffness(t, a_i, q_i, omega, mass, drive_drift, decay_rate):
    """k(t) in U = k(t) u^2 for one axis."""
    s = drive_scale(t, drive_drift, decay_rate)
    return 0.125 * mass * omega * omega * (a_i + 2.0 * q_i * s * math.cos(omega * t))


@njit(cache=True)
def integrate_chunk(
    u, v, step0, n_steps, dt,
    omega, a, q, drive_drift, decay_rate,
    damping_factor, kick_sigma, mass,
    static_acc, stray_acc, tickle_acc, tickle_omega,
    gain_matrix, quadratic, ctrl_params, ctrl_state, ctrl_acc, ctrl_channel, ctrl_ring, ctrl_delay,
    bath_noise, detector_noise, escape_distance, decimation,
    out_pos, out_vel, out_det, out_fb, ledger,
):
    """
    Integrate ``n_steps`` steps starting at global step ``step0``.

    ``u`` and ``v`` hold the state and are updated in place, as are the
    controller states and ring buffers. Samples are recorded before each
    step and block-averaged over ``decimation`` samples into the output
    arrays. Returns (recorded samples, escaped).
    """
    n_ctrl = ctrl_params.shape[0]
    det = np.zeros(3)
    fb_acc = np.zeros(3)
    u_start = np.zeros(3)
    inv_d = 1.0 / decimation

    for n in range(n_steps):
        step = step0 + n
        t = step * dt
        t1 = t + dt

        v_fb = 0.0
        for i in range(3):
            fb_acc[i] = 0.0
        if n_ctrl > 0:
            for ch in range(3):
                sig = gain_matrix[ch, 0] * u[0] + gain_matrix[ch, 1] * u[1] + gain_matrix[ch, 2] * u[2]
                det[ch] = sig + quadratic * sig * sig + detector_noise[ch, n]
            for k in range(n_ctrl):
                y = iq_update(det[ctrl_channel[k]], ctrl_state[k], ctrl_params[k])
                size = ctrl_delay[k] + 1
                ctrl_ring[k, step % size] = y
                applied = ctrl_ring[k, (step + 1) % size]
                v_fb += applied
                for i in range(3):
                    fb_acc[i] += ctrl_acc[k, i] * applied

        block = n // decimation
        for i in range(3):
            out_pos[i, block] += u[i] * inv_d
            out_vel[i, block] += v[i] * inv_d
            out_det[i, block] += det[i] * inv_d
        out_fb[block] += v_fb * inv_d

        # drive column: trap-force kick work plus k(t1) u1^2 - k(t) u0^2,
        # so the per-step balance is exact for the discrete scheme
        for i in range(3):
            u_start[i] = u[i]
        _half_kick(u, v, t, dt, a, q, omega, drive_drift, decay_rate, mass,
                   static_acc, stray_acc, tickle_acc, tickle_omega, fb_acc, ledger)
        for i in range(3):
            u[i] += 0.5 * dt * v[i]
            v_old = v[i]
            v[i] = damping_factor * v_old + kick_sigma * bath_noise[i, n]
            ledger[i, LEDGER_BATH] += 0.5 * mass * (v[i] * v[i] - v_old * v_old)
            u[i] += 0.5 * dt * v[i]
            ledger[i, LEDGER_DRIVE] += (
                _stiffness(t1, a[i], q[i], omega, mass, drive_drift, decay_rate) * u[i] * u[i]
                - _stiffness(t, a[i], q[i], omega, mass, drive_drift, decay_rate) * u_start[i] * u_start[i]
            )

        _half_kick(u, v, t1, dt, a, q, omega, drive_drift, decay_rate, mass,
                   static_acc, stray_acc, tickle_acc, tickle_omega, fb_acc, ledger)

        for i in range(3):
            if not abs(u[i]) <= escape_distance:
                return n + 1, True
    return n_steps, False
