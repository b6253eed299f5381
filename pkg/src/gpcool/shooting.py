"""Single-shooting objectives and a box-constrained quasi-Newton solver.

The receding-horizon program is reduced to its valve angles: the temperature
recursion is eliminated by shooting through the model, and the quadratically
penalised slacks have the closed-form optimum ``max(0, violation)``, which
turns the slack terms into an exact penalty ``weight * relu(violation)**2``.
What remains is a smooth (C1) objective over box-bounded angles, minimised by
a projected L-BFGS loop.

Everything here is numba-compiled and allocation-light on purpose: one solve
is a single Python call, so measured solve times track the O(n^2) kernel
algebra of the underlying GPs instead of interpreter overhead.

Feature wiring is encoded per zone as ``(kind, zone)`` pairs:
kind 0 = padding, 1 = current temperature of `zone`, 2 = previous temperature,
3 = current valve angle of `zone`, 4 = supply water temp, 5 = outdoor temp.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KIND_PAD = 0
KIND_T_CUR = 1
KIND_T_PREV = 2
KIND_THETA = 3
KIND_T_SUP = 4
KIND_T_OUT = 5

STD_SMOOTHING = 1e-12

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_STALLED = 2


@njit(cache=True)
def _electrical_power_grad(theta_sum, t_out, qcoef, copcoef, cop_floor):
    """E(theta_sum) and dE/d(theta_sum) for one stage."""
    t = t_out
    s = theta_sum
    q = (
        qcoef[0] * t
        + qcoef[1] * s
        + qcoef[2] * t * t
        + qcoef[3] * t * s
        + qcoef[4] * s * s
        + qcoef[5] * t * t * t
        + qcoef[6] * t * t * s
        + qcoef[7] * t * s * s
        + qcoef[8] * s * s * s
        + qcoef[9]
    )
    dq = (
        qcoef[1]
        + qcoef[3] * t
        + 2.0 * qcoef[4] * s
        + qcoef[6] * t * t
        + 2.0 * qcoef[7] * t * s
        + 3.0 * qcoef[8] * s * s
    )
    c = ((copcoef[0] * q + copcoef[1]) * q + copcoef[2]) * q * q + copcoef[3] * q + copcoef[4]
    if c <= cop_floor:
        return q / cop_floor, dq / cop_floor
    dc = (
        4.0 * copcoef[0] * q * q * q
        + 3.0 * copcoef[1] * q * q
        + 2.0 * copcoef[2] * q
        + copcoef[3]
    )
    e = q / c
    de = dq * (c - q * dc) / (c * c)
    return e, de


@njit(cache=True)
def gp_shoot_full(u, args):
    """Objective, gradient and trajectories of the GP shooting problem.

    ``u`` is the flattened (horizon, 3) valve plan.  Returns
    ``(f, g, T_traj, std_traj, E_traj)`` where trajectories cover the
    predicted stages 1..N.
    """
    (
        X,
        Kinv,
        alpha,
        inv_ell2,
        slope,
        offset,
        sigma2,
        n_arr,
        dims,
        src_kind,
        src_zone,
        T0,
        Tm1,
        t_sup,
        t_out,
        qcoef,
        copcoef,
        horizon,
        t_max,
        beta,
        rho,
        rho_term,
        cop_floor,
    ) = args

    nvar = 3 * horizon
    f = 0.0
    g = np.zeros(nvar)
    T_traj = np.empty((horizon, 3))
    std_traj = np.empty((horizon, 3))
    E_traj = np.empty(horizon)

    T_cur = T0.copy()
    T_prev = Tm1.copy()
    J_cur = np.zeros((3, nvar))
    J_prev = np.zeros((3, nvar))
    x = np.empty(7)
    dmu = np.empty(7)
    dvar = np.empty(7)

    for t in range(horizon):
        stage = t + 1
        w = rho_term if stage == horizon else rho
        nv = 3 * stage  # decisions that can influence this stage
        J_new = np.zeros((3, nvar))
        T_new = np.empty(3)

        for i in range(3):
            d = dims[i]
            n = n_arr[i]
            for j in range(d):
                kind = src_kind[i, j]
                z = src_zone[i, j]
                if kind == KIND_T_CUR:
                    x[j] = T_cur[z]
                elif kind == KIND_T_PREV:
                    x[j] = T_prev[z]
                elif kind == KIND_THETA:
                    x[j] = u[3 * t + z]
                elif kind == KIND_T_SUP:
                    x[j] = t_sup
                else:
                    x[j] = t_out

            # kernel vector, mean, variance and their input gradients
            kx = np.empty(n)
            for m in range(n):
                ssq = 0.0
                for j in range(d):
                    diff = x[j] - X[i, m, j]
                    ssq += diff * diff * inv_ell2[i, j]
                kx[m] = sigma2[i] * np.exp(-0.5 * ssq)
            q = np.empty(n)
            quad = 0.0
            dot_alpha = 0.0
            for m in range(n):
                acc = 0.0
                for mm in range(n):
                    acc += Kinv[i, m, mm] * kx[mm]
                q[m] = acc
                quad += kx[m] * acc
                dot_alpha += kx[m] * alpha[i, m]
            mu = offset[i]
            for j in range(d):
                mu += slope[i, j] * x[j]
                dmu[j] = slope[i, j]
                dvar[j] = 0.0
            mu += dot_alpha
            var = sigma2[i] - quad
            for m in range(n):
                wa = alpha[i, m] * kx[m]
                wq = q[m] * kx[m]
                for j in range(d):
                    dd = (X[i, m, j] - x[j]) * inv_ell2[i, j]
                    dmu[j] += wa * dd
                    dvar[j] += -2.0 * wq * dd
            if var < 0.0:
                var = 0.0
                for j in range(d):
                    dvar[j] = 0.0
            std = np.sqrt(var + STD_SMOOTHING)

            # chain rule through the wiring into the decision space, for both
            # the mean and the (smoothed) standard deviation
            dstd_du = np.zeros(nv)
            inv_2std = 0.5 / std
            for j in range(d):
                kind = src_kind[i, j]
                z = src_zone[i, j]
                cm = dmu[j]
                cv = dvar[j] * inv_2std
                if kind == KIND_T_CUR:
                    for v in range(nv):
                        J_new[i, v] += cm * J_cur[z, v]
                        dstd_du[v] += cv * J_cur[z, v]
                elif kind == KIND_T_PREV:
                    for v in range(nv):
                        J_new[i, v] += cm * J_prev[z, v]
                        dstd_du[v] += cv * J_prev[z, v]
                elif kind == KIND_THETA:
                    J_new[i, 3 * t + z] += cm
                    dstd_du[3 * t + z] += cv

            T_new[i] = mu
            T_traj[t, i] = mu
            std_traj[t, i] = std

            viol = mu + beta * std - t_max
            if viol > 0.0:
                f += w * viol * viol
                coef = 2.0 * w * viol
                for v in range(nv):
                    g[v] += coef * (J_new[i, v] + beta * dstd_du[v])

        theta_sum = u[3 * t] + u[3 * t + 1] + u[3 * t + 2]
        e, de = _electrical_power_grad(theta_sum, t_out, qcoef, copcoef, cop_floor)
        E_traj[t] = e
        f += e
        g[3 * t] += de
        g[3 * t + 1] += de
        g[3 * t + 2] += de

        J_prev = J_cur
        J_cur = J_new
        T_prev = T_cur
        T_cur = T_new

    return f, g, T_traj, std_traj, E_traj


@njit(cache=True)
def gp_shoot_obj(u, args):
    res = gp_shoot_full(u, args)
    return res[0], res[1]


@njit(cache=True)
def _valve_flow(theta, shape, theta_max):
    frac = theta / theta_max
    if frac < 0.0:
        frac = 0.0
    elif frac > 1.0:
        frac = 1.0
    denom = 1.0 - np.exp(-shape)
    return (1.0 - np.exp(-shape * frac)) / denom


@njit(cache=True)
def _valve_flow_grad(theta, shape, theta_max):
    frac = theta / theta_max
    if frac < 0.0 or frac > 1.0:
        return 0.0
    denom = 1.0 - np.exp(-shape)
    return (shape / theta_max) * np.exp(-shape * frac) / denom


@njit(cache=True)
def plant_shoot_full(u, args):
    """Shooting objective for the oracle controller: true RC dynamics,
    time-varying disturbance previews, no uncertainty term."""
    (
        cap,
        ua_out,
        g12,
        g23,
        vent_ua,
        eff_max,
        valve_shape,
        theta_max_plant,
        sol_ap,
        t_out_seq,
        t_sup_seq,
        r_sol_seq,
        gains_seq,
        T0,
        dt_sub,
        n_sub,
        qcoef,
        copcoef,
        horizon,
        t_max,
        rho,
        rho_term,
        cop_floor,
    ) = args

    nvar = 3 * horizon
    f = 0.0
    g = np.zeros(nvar)
    T_traj = np.empty((horizon, 3))
    std_traj = np.zeros((horizon, 3))
    E_traj = np.empty(horizon)

    T = T0.copy()
    J = np.zeros((3, nvar))

    for t in range(horizon):
        stage = t + 1
        w = rho_term if stage == horizon else rho
        nv = 3 * stage
        t_out = t_out_seq[t]
        t_sup = t_sup_seq[t]
        r_sol = r_sol_seq[t]

        for _ in range(n_sub):
            # heat flows and their T / theta sensitivities
            q0 = np.empty(3)
            dq_dtheta = np.empty(3)
            for i in range(3):
                th = u[3 * t + i]
                flow = _valve_flow(th, valve_shape, theta_max_plant)
                t_sa = t_out - eff_max * flow * (t_out - t_sup)
                q0[i] = (
                    ua_out[i] * (t_out - T[i])
                    + vent_ua[i] * (t_sa - T[i])
                    + sol_ap[i] * r_sol
                    + gains_seq[t, i]
                )
                dflow = _valve_flow_grad(th, valve_shape, theta_max_plant)
                dq_dtheta[i] = vent_ua[i] * (-eff_max * dflow * (t_out - t_sup))
            q0[0] += g12 * (T[1] - T[0])
            q0[1] += g12 * (T[0] - T[1]) + g23 * (T[2] - T[1])
            q0[2] += g23 * (T[1] - T[2])

            # A = dq/dT
            a00 = -ua_out[0] - vent_ua[0] - g12
            a11 = -ua_out[1] - vent_ua[1] - g12 - g23
            a22 = -ua_out[2] - vent_ua[2] - g23

            J_next = np.empty((3, nvar))
            for v in range(nv):
                j0 = J[0, v]
                j1 = J[1, v]
                j2 = J[2, v]
                J_next[0, v] = j0 + dt_sub / cap[0] * (a00 * j0 + g12 * j1)
                J_next[1, v] = j1 + dt_sub / cap[1] * (g12 * j0 + a11 * j1 + g23 * j2)
                J_next[2, v] = j2 + dt_sub / cap[2] * (g23 * j1 + a22 * j2)
            for i in range(3):
                J_next[i, 3 * t + i] += dt_sub / cap[i] * dq_dtheta[i]
                for v in range(nv, nvar):
                    J_next[i, v] = 0.0
                T[i] = T[i] + dt_sub * q0[i] / cap[i]
            J = J_next

        for i in range(3):
            T_traj[t, i] = T[i]
            viol = T[i] - t_max
            if viol > 0.0:
                f += w * viol * viol
                coef = 2.0 * w * viol
                for v in range(nv):
                    g[v] += coef * J[i, v]

        theta_sum = u[3 * t] + u[3 * t + 1] + u[3 * t + 2]
        e, de = _electrical_power_grad(theta_sum, t_out, qcoef, copcoef, cop_floor)
        E_traj[t] = e
        f += e
        g[3 * t] += de
        g[3 * t + 1] += de
        g[3 * t + 2] += de

    return f, g, T_traj, std_traj, E_traj


@njit(cache=True)
def plant_shoot_obj(u, args):
    res = plant_shoot_full(u, args)
    return res[0], res[1]


@njit(cache=True)
def _kkt_residual(x, g, lo, hi, eps):
    worst = 0.0
    for i in range(x.size):
        if x[i] <= lo[i] + eps:
            r = -g[i] if g[i] < 0.0 else 0.0
        elif x[i] >= hi[i] - eps:
            r = g[i] if g[i] > 0.0 else 0.0
        else:
            r = abs(g[i])
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def _clip_box(x, lo, hi):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        out[i] = v
    return out


@njit(cache=True)
def minimize_box(objective, args, x0, lo, hi, max_iter, kkt_tol, memory):
    """Projected L-BFGS with Armijo backtracking on box constraints.

    Returns ``(x, f, g, kkt, iterations, evals, status)`` at the best point
    visited.  Status: 0 KKT tolerance reached, 1 iteration cap, 2 stalled
    line search (best iterate still returned).
    """
    n = x0.size
    x = _clip_box(x0, lo, hi)
    f, g = objective(x, args)
    evals = 1
    bound_eps = 1e-9 * (np.max(hi - lo) + 1.0)

    S = np.zeros((memory, n))
    Y = np.zeros((memory, n))
    rho_mem = np.zeros(memory)
    count = 0
    head = 0  # next slot to write

    best_f = f
    best_x = x.copy()
    best_g = g.copy()
    status = STATUS_MAX_ITER
    it = 0
    stall_retries = 0

    while it < max_iter:
        kkt = _kkt_residual(x, g, lo, hi, bound_eps)
        if kkt <= kkt_tol:
            status = STATUS_CONVERGED
            break

        # two-loop recursion
        d = -g
        if count > 0:
            qv = g.copy()
            a = np.empty(count)
            for idx in range(count - 1, -1, -1):
                j = (head - count + idx) % memory
                a[idx] = rho_mem[j] * np.dot(S[j], qv)
                qv = qv - a[idx] * Y[j]
            last = (head - 1) % memory
            gamma = np.dot(S[last], Y[last]) / np.dot(Y[last], Y[last])
            r = gamma * qv
            for idx in range(count):
                j = (head - count + idx) % memory
                b = rho_mem[j] * np.dot(Y[j], r)
                r = r + (a[idx] - b) * S[j]
            d = -r
        else:
            # no curvature information: normalise to a unit-length move so the
            # expansion phase can find the right scale quickly
            gn = np.max(np.abs(g))
            if gn > 1e-300:
                d = -g / gn

        # deactivate directions pushing into active bounds
        useful = False
        for i in range(n):
            if x[i] <= lo[i] + bound_eps and d[i] < 0.0:
                d[i] = 0.0
            elif x[i] >= hi[i] - bound_eps and d[i] > 0.0:
                d[i] = 0.0
            if d[i] != 0.0:
                useful = True
        gtd = np.dot(g, d)
        if not useful or gtd >= 0.0:
            d = -g
            for i in range(n):
                if x[i] <= lo[i] + bound_eps and d[i] < 0.0:
                    d[i] = 0.0
                elif x[i] >= hi[i] - bound_eps and d[i] > 0.0:
                    d[i] = 0.0
            gtd = np.dot(g, d)
            if gtd >= -1e-300:
                status = STATUS_STALLED  # nothing useful left to move
                break

        # projected backtracking line search with a forward-tracking phase:
        # flat stretches of the objective would otherwise crawl at the raw
        # gradient scale
        alpha = 1.0
        accepted = False
        f_new = f
        for _ls in range(40):
            x_new = _clip_box(x + alpha * d, lo, hi)
            step_sq = 0.0
            armijo = 0.0
            for i in range(n):
                dx = x_new[i] - x[i]
                step_sq += dx * dx
                armijo += g[i] * dx
            if step_sq == 0.0:
                break
            f_new, g_new = objective(x_new, args)
            evals += 1
            if f_new <= f + 1e-4 * armijo:
                accepted = True
                break
            alpha *= 0.5
        if accepted and alpha == 1.0:
            for _exp in range(25):
                x_try = _clip_box(x + 2.0 * alpha * d, lo, hi)
                moved = False
                armijo = 0.0
                for i in range(n):
                    dx = x_try[i] - x[i]
                    armijo += g[i] * dx
                    if x_try[i] != x_new[i]:
                        moved = True
                if not moved:
                    break
                f_try, g_try = objective(x_try, args)
                evals += 1
                if f_try <= f + 1e-4 * armijo and f_try < f_new:
                    alpha *= 2.0
                    x_new = x_try
                    f_new = f_try
                    g_new = g_try
                else:
                    break

        if not accepted:
            if count > 0 and stall_retries < 3:
                # quasi-Newton model went bad; restart from steepest descent
                count = 0
                head = 0
                stall_retries += 1
                it += 1
                continue
            status = STATUS_STALLED
            break

        s_vec = x_new - x
        y_vec = g_new - g
        sy = np.dot(s_vec, y_vec)
        ss = np.sqrt(np.dot(s_vec, s_vec))
        yy = np.sqrt(np.dot(y_vec, y_vec))
        if sy > 1e-10 * ss * yy:
            S[head] = s_vec
            Y[head] = y_vec
            rho_mem[head] = 1.0 / sy
            head = (head + 1) % memory
            if count < memory:
                count += 1

        x = x_new
        f = f_new
        g = g_new
        if f < best_f:
            best_f = f
            best_x = x.copy()
            best_g = g.copy()
        it += 1

    if f < best_f:
        best_f = f
        best_x = x.copy()
        best_g = g.copy()
    kkt_best = _kkt_residual(best_x, best_g, lo, hi, bound_eps)
    if kkt_best <= kkt_tol:
        status = STATUS_CONVERGED
    return best_x, best_f, best_g, kkt_best, it, evals, status


def warm_up_jit() -> None:
    """Compile the kernels on a tiny problem (call once before timing)."""
    from . import mpc  # deferred: mpc imports this module

    mpc._warm_up()
