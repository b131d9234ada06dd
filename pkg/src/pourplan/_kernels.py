"""Compiled inner loops of the particle solver.

Everything here is numba-njit'ed scalar code operating on preallocated
arrays; loops run in fixed index order and nothing is threaded, so a given
input state always produces bit-identical output.  The public API lives in
`pourplan.fluidsim`.

Neighbour search uses a spatial hash: particles are binned by integer cell
coordinates hashed into a power-of-two table (stable counting sort), and the
27-cell walk matches candidates by exact cell coordinates, so hash collisions
only cost a few extra comparisons.

Collider walls are passed in a packed form: per primitive a type code
(box/cylinder), a role code (outer union / interior cavity / mouth plug) and
an 8-float parameter row; per collider a contiguous primitive range and a
rigid pose.  The wall SDF is max(outer, -interior, -plug), matching
`containers.SdfCollider.sdf`.
"""

from __future__ import annotations

from math import floor, sqrt

import numpy as np
from numba import njit

GRAVITY = 9.81  # m/s^2
PROJECTION_TOL = 1e-5  # m, wall penetration left after projection
NEWTON_ITERS = 4
GRAD_EPS = 1e-6  # m, central-difference step for SDF gradients

PRIM_BOX = 0
PRIM_CYLINDER = 1
ROLE_OUTER = 0
ROLE_INTERIOR = 1
ROLE_PLUG = 2

HASH_PX = 73856093
HASH_PY = 19349663
HASH_PZ = 83492791

# indices into the scalar-parameter vector
SP_DT = 0
SP_H = 1
SP_H2 = 2
SP_C_POLY = 3
SP_C_SPIKY = 4
SP_MASS = 5
SP_INV_RHO0 = 6
SP_EPS_CFM = 7
SP_SCORR_K = 8
SP_INV_W_DQ = 9
SP_DP_CLAMP = 10
SP_FLOOR_Y = 11
SP_MU = 12
SP_MAX_SPEED = 13
SP_INV_CELL = 14
SP_WALL_BAND = 15  # displacement above which a midpoint tunneling check runs
N_SP = 16


@njit(cache=True)
def _prim_sdf(prim_type, params, px, py, pz):
    """Exact SDF of one primitive at a body-frame point."""
    if prim_type == PRIM_BOX:
        ax = abs(px - params[0]) - params[3]
        ay = abs(py - params[1]) - params[4]
        az = abs(pz - params[2]) - params[5]
        mx = ax if ax > 0.0 else 0.0
        my = ay if ay > 0.0 else 0.0
        mz = az if az > 0.0 else 0.0
        outside = sqrt(mx * mx + my * my + mz * mz)
        hi = ax
        if ay > hi:
            hi = ay
        if az > hi:
            hi = az
        inside = hi if hi < 0.0 else 0.0
        return outside + inside
    # capped cylinder: base(3), axis(3), length, radius
    half = 0.5 * params[6]
    mx_ = px - (params[0] + params[3] * half)
    my_ = py - (params[1] + params[4] * half)
    mz_ = pz - (params[2] + params[5] * half)
    y = mx_ * params[3] + my_ * params[4] + mz_ * params[5]
    rx = mx_ - y * params[3]
    ry = my_ - y * params[4]
    rz = mz_ - y * params[5]
    radial = sqrt(rx * rx + ry * ry + rz * rz)
    dx = radial - params[7]
    dy = abs(y) - half
    ox = dx if dx > 0.0 else 0.0
    oy = dy if dy > 0.0 else 0.0
    outside = sqrt(ox * ox + oy * oy)
    hi = dx if dx > dy else dy
    inside = hi if hi < 0.0 else 0.0
    return outside + inside


@njit(cache=True)
def _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz):
    """Wall SDF of one collider at a world point (rot/trans = body->world pose)."""
    dx = px - trans[0]
    dy = py - trans[1]
    dz = pz - trans[2]
    qx = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz
    qy = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz
    qz = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz
    outer = 1e30
    interior = 1e30
    plug = 1e30
    for k in range(p_start, p_end):
        d = _prim_sdf(prim_type[k], prim_params[k], qx, qy, qz)
        role = prim_role[k]
        if role == ROLE_OUTER:
            if d < outer:
                outer = d
        elif role == ROLE_INTERIOR:
            if d < interior:
                interior = d
        else:
            if d < plug:
                plug = d
    d = outer
    if -interior > d:
        d = -interior
    if plug < 1e29 and -plug > d:
        d = -plug
    return d


@njit(cache=True)
def _interior_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz):
    dx = px - trans[0]
    dy = py - trans[1]
    dz = pz - trans[2]
    qx = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz
    qy = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz
    qz = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz
    interior = 1e30
    for k in range(p_start, p_end):
        if prim_role[k] == ROLE_INTERIOR:
            d = _prim_sdf(prim_type[k], prim_params[k], qx, qy, qz)
            if d < interior:
                interior = d
    return interior


@njit(cache=True)
def _project_particle(
    prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz
):
    """Push a point out of one collider's wall; returns (x, y, z, penetration,
    nx, ny, nz).  Penetration is 0 when the point was already outside."""
    d0 = _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz)
    if d0 >= 0.0:
        return px, py, pz, 0.0, 0.0, 1.0, 0.0
    nx = 0.0
    ny = 1.0
    nz = 0.0
    d = d0
    for _ in range(NEWTON_ITERS):
        if d >= -PROJECTION_TOL:
            break
        gx = (
            _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px + GRAD_EPS, py, pz)
            - _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px - GRAD_EPS, py, pz)
        )
        gy = (
            _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py + GRAD_EPS, pz)
            - _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py - GRAD_EPS, pz)
        )
        gz = (
            _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz + GRAD_EPS)
            - _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz - GRAD_EPS)
        )
        gn = sqrt(gx * gx + gy * gy + gz * gz)
        if gn < 1e-12:
            gy = 1.0
            gn = 1.0
        nx = gx / gn
        ny = gy / gn
        nz = gz / gn
        px -= d * nx
        py -= d * ny
        pz -= d * nz
        d = _wall_sdf(prim_type, prim_role, prim_params, p_start, p_end, rot, trans, px, py, pz)
    return px, py, pz, -d0, nx, ny, nz


@njit(cache=True)
def _bin_particles(npos, sp, table_mask, cell_coords, hash_of, bucket_start, sorted_idx):
    """Stable counting sort of particles into hashed grid cells."""
    n = npos.shape[0]
    inv_cell = sp[SP_INV_CELL]
    for b in range(table_mask + 2):
        bucket_start[b] = 0
    for i in range(n):
        cx = int(floor(npos[i, 0] * inv_cell))
        cy = int(floor(npos[i, 1] * inv_cell))
        cz = int(floor(npos[i, 2] * inv_cell))
        cell_coords[i, 0] = cx
        cell_coords[i, 1] = cy
        cell_coords[i, 2] = cz
        b = ((cx * HASH_PX) ^ (cy * HASH_PY) ^ (cz * HASH_PZ)) & table_mask
        hash_of[i] = b
        bucket_start[b + 1] += 1
    for b in range(table_mask + 1):
        bucket_start[b + 1] += bucket_start[b]
    for i in range(n):
        b = hash_of[i]
        sorted_idx[bucket_start[b]] = i
        bucket_start[b] += 1
    for b in range(table_mask + 1, 0, -1):
        bucket_start[b] = bucket_start[b - 1]
    bucket_start[0] = 0


@njit(cache=True)
def _gather_neighbors(npos, sp, table_mask, cell_coords, bucket_start, sorted_idx, nbrs, nbr_cnt):
    n = npos.shape[0]
    h2 = sp[SP_H2]
    kmax = nbrs.shape[1]
    for i in range(n):
        px = npos[i, 0]
        py = npos[i, 1]
        pz = npos[i, 2]
        cx = cell_coords[i, 0]
        cy = cell_coords[i, 1]
        cz = cell_coords[i, 2]
        cnt = 0
        for ox in range(-1, 2):
            gx = cx + ox
            for oy in range(-1, 2):
                gy = cy + oy
                for oz in range(-1, 2):
                    gz = cz + oz
                    b = ((gx * HASH_PX) ^ (gy * HASH_PY) ^ (gz * HASH_PZ)) & table_mask
                    for s in range(bucket_start[b], bucket_start[b + 1]):
                        j = sorted_idx[s]
                        if j == i:
                            continue
                        # reject hash collisions from other cells
                        if (
                            cell_coords[j, 0] != gx
                            or cell_coords[j, 1] != gy
                            or cell_coords[j, 2] != gz
                        ):
                            continue
                        dx = px - npos[j, 0]
                        dy = py - npos[j, 1]
                        dz = pz - npos[j, 2]
                        if dx * dx + dy * dy + dz * dz < h2 and cnt < kmax:
                            nbrs[i, cnt] = j
                            cnt += 1
        nbr_cnt[i] = cnt


@njit(cache=True)
def _substep(
    pos,
    vel,
    npos,
    lam,
    dp,
    sp,
    table_mask,
    cell_coords,
    hash_of,
    bucket_start,
    sorted_idx,
    nbrs,
    nbr_cnt,
    iterations,
    prim_type,
    prim_role,
    prim_params,
    coll_pstart,
    coll_pend,
    coll_rot,
    coll_trans,
    coll_prev_rot,
    coll_prev_trans,
    coll_moving,
    coll_bs_body,
    coll_bs_r,
    coll_mu,
):
    """One position-based-dynamics substep; returns (max_speed, unstable)."""
    n = pos.shape[0]
    dt = sp[SP_DT]
    h = sp[SP_H]
    h2 = sp[SP_H2]
    c_poly = sp[SP_C_POLY]
    c_spiky = sp[SP_C_SPIKY]
    mass = sp[SP_MASS]
    inv_rho0 = sp[SP_INV_RHO0]
    m_inv_rho0 = mass * inv_rho0
    w_self = c_poly * h2 * h2 * h2  # poly6 at r = 0
    n_coll = coll_pstart.shape[0]

    # world bounding spheres for cheap collider culling
    bs_x = np.empty(n_coll)
    bs_y = np.empty(n_coll)
    bs_z = np.empty(n_coll)
    bs_r2 = np.empty(n_coll)
    for ci in range(n_coll):
        cx = coll_bs_body[ci, 0]
        cy = coll_bs_body[ci, 1]
        cz = coll_bs_body[ci, 2]
        r = coll_rot[ci]
        bs_x[ci] = r[0, 0] * cx + r[0, 1] * cy + r[0, 2] * cz + coll_trans[ci, 0]
        bs_y[ci] = r[1, 0] * cx + r[1, 1] * cy + r[1, 2] * cz + coll_trans[ci, 1]
        bs_z[ci] = r[2, 0] * cx + r[2, 1] * cy + r[2, 2] * cz + coll_trans[ci, 2]
        reach = coll_bs_r[ci] + 2.0 * h
        bs_r2[ci] = reach * reach

    # 1. gravity + prediction
    for i in range(n):
        vel[i, 1] -= GRAVITY * dt
        npos[i, 0] = pos[i, 0] + vel[i, 0] * dt
        npos[i, 1] = pos[i, 1] + vel[i, 1] * dt
        npos[i, 2] = pos[i, 2] + vel[i, 2] * dt

    # 2. neighbours on predicted positions
    _bin_particles(npos, sp, table_mask, cell_coords, hash_of, bucket_start, sorted_idx)
    _gather_neighbors(npos, sp, table_mask, cell_coords, bucket_start, sorted_idx, nbrs, nbr_cnt)

    # 3. density constraint iterations + wall projection
    for _ in range(iterations):
        for i in range(n):
            rho = mass * w_self
            sgx = 0.0
            sgy = 0.0
            sgz = 0.0
            sumsq = 0.0
            px = npos[i, 0]
            py = npos[i, 1]
            pz = npos[i, 2]
            for k in range(nbr_cnt[i]):
                j = nbrs[i, k]
                dx = px - npos[j, 0]
                dy = py - npos[j, 1]
                dz = pz - npos[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 >= h2:
                    continue
                diff = h2 - r2
                rho += mass * c_poly * diff * diff * diff
                r = sqrt(r2)
                if r > 1e-12:
                    hr = h - r
                    gw = c_spiky * hr * hr / r
                    gx = gw * dx
                    gy = gw * dy
                    gz = gw * dz
                    sgx += gx
                    sgy += gy
                    sgz += gz
                    sumsq += gx * gx + gy * gy + gz * gz
            c = rho * inv_rho0 - 1.0
            if c < 0.0:
                c = 0.0  # only correct compression; free surfaces stay uncorrected
            denom = m_inv_rho0 * m_inv_rho0 * (sgx * sgx + sgy * sgy + sgz * sgz + sumsq)
            lam[i] = -c / (denom + sp[SP_EPS_CFM])

        # Jacobi pass: compute all corrections against the same positions,
        # then apply them.
        for i in range(n):
            dpx = 0.0
            dpy = 0.0
            dpz = 0.0
            px = npos[i, 0]
            py = npos[i, 1]
            pz = npos[i, 2]
            for k in range(nbr_cnt[i]):
                j = nbrs[i, k]
                dx = px - npos[j, 0]
                dy = py - npos[j, 1]
                dz = pz - npos[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 >= h2:
                    continue
                diff = h2 - r2
                w = c_poly * diff * diff * diff
                wratio = w * sp[SP_INV_W_DQ]
                scorr = -sp[SP_SCORR_K] * wratio * wratio * wratio * wratio
                r = sqrt(r2)
                if r > 1e-12:
                    hr = h - r
                    gw = c_spiky * hr * hr / r
                    s = lam[i] + lam[j] + scorr
                    dpx += s * gw * dx
                    dpy += s * gw * dy
                    dpz += s * gw * dz
            dpx *= m_inv_rho0
            dpy *= m_inv_rho0
            dpz *= m_inv_rho0
            mag2 = dpx * dpx + dpy * dpy + dpz * dpz
            clamp = sp[SP_DP_CLAMP]
            if mag2 > clamp * clamp:
                scale = clamp / sqrt(mag2)
                dpx *= scale
                dpy *= scale
                dpz *= scale
            dp[i, 0] = dpx
            dp[i, 1] = dpy
            dp[i, 2] = dpz
        for i in range(n):
            npos[i, 0] += dp[i, 0]
            npos[i, 1] += dp[i, 1]
            npos[i, 2] += dp[i, 2]

    # 4. contact pass with friction and tunneling guard
    mu = sp[SP_MU]
    band2 = sp[SP_WALL_BAND] * sp[SP_WALL_BAND]
    for i in range(n):
        px = npos[i, 0]
        py = npos[i, 1]
        pz = npos[i, 2]
        ox = pos[i, 0]
        oy = pos[i, 1]
        oz = pos[i, 2]
        disp2 = (px - ox) * (px - ox) + (py - oy) * (py - oy) + (pz - oz) * (pz - oz)
        for ci in range(n_coll):
            bx = px - bs_x[ci]
            by = py - bs_y[ci]
            bz = pz - bs_z[ci]
            if bx * bx + by * by + bz * bz > bs_r2[ci]:
                continue
            # midpoint check against tunneling through thin walls at high speed
            if disp2 > band2:
                mx = 0.5 * (px + ox)
                my = 0.5 * (py + oy)
                mz = 0.5 * (pz + oz)
                dmid = _wall_sdf(
                    prim_type, prim_role, prim_params, coll_pstart[ci], coll_pend[ci],
                    coll_rot[ci], coll_trans[ci], mx, my, mz,
                )
                dnew = _wall_sdf(
                    prim_type, prim_role, prim_params, coll_pstart[ci], coll_pend[ci],
                    coll_rot[ci], coll_trans[ci], px, py, pz,
                )
                if dmid < 0.0 and dnew >= 0.0:
                    px, py, pz, pen, nx, ny, nz = _project_particle(
                        prim_type, prim_role, prim_params, coll_pstart[ci], coll_pend[ci],
                        coll_rot[ci], coll_trans[ci], mx, my, mz,
                    )
            px2, py2, pz2, pen, nx, ny, nz = _project_particle(
                prim_type, prim_role, prim_params, coll_pstart[ci], coll_pend[ci],
                coll_rot[ci], coll_trans[ci], px, py, pz,
            )
            px = px2
            py = py2
            pz = pz2
            mu_c = coll_mu[ci]
            if pen > 0.0 and mu_c > 0.0:
                # displacement of the wall contact point over this step
                wx = 0.0
                wy = 0.0
                wz = 0.0
                if coll_moving[ci] != 0:
                    rdx = ox - coll_prev_trans[ci, 0]
                    rdy = oy - coll_prev_trans[ci, 1]
                    rdz = oz - coll_prev_trans[ci, 2]
                    pr = coll_prev_rot[ci]
                    qx = pr[0, 0] * rdx + pr[1, 0] * rdy + pr[2, 0] * rdz
                    qy = pr[0, 1] * rdx + pr[1, 1] * rdy + pr[2, 1] * rdz
                    qz = pr[0, 2] * rdx + pr[1, 2] * rdy + pr[2, 2] * rdz
                    cr = coll_rot[ci]
                    wx = cr[0, 0] * qx + cr[0, 1] * qy + cr[0, 2] * qz + coll_trans[ci, 0] - ox
                    wy = cr[1, 0] * qx + cr[1, 1] * qy + cr[1, 2] * qz + coll_trans[ci, 1] - oy
                    wz = cr[2, 0] * qx + cr[2, 1] * qy + cr[2, 2] * qz + coll_trans[ci, 2] - oz
                tx = (px - ox) - wx
                ty = (py - oy) - wy
                tz = (pz - oz) - wz
                tn = tx * nx + ty * ny + tz * nz
                tx -= tn * nx
                ty -= tn * ny
                tz -= tn * nz
                tmag = sqrt(tx * tx + ty * ty + tz * tz)
                if tmag > 1e-12:
                    scale = mu_c * pen / tmag
                    if scale > 1.0:
                        scale = 1.0
                    px -= tx * scale
                    py -= ty * scale
                    pz -= tz * scale
        if py < sp[SP_FLOOR_Y]:
            pen = sp[SP_FLOOR_Y] - py
            py = sp[SP_FLOOR_Y]
            tx = px - ox
            tz = pz - oz
            tmag = sqrt(tx * tx + tz * tz)
            if tmag > 1e-12 and mu > 0.0:
                scale = mu * pen / tmag
                if scale > 1.0:
                    scale = 1.0
                px -= tx * scale
                pz -= tz * scale
        npos[i, 0] = px
        npos[i, 1] = py
        npos[i, 2] = pz

    # 5. velocity from position delta
    inv_dt = 1.0 / dt
    vmax2 = 0.0
    for i in range(n):
        vx = (npos[i, 0] - pos[i, 0]) * inv_dt
        vy = (npos[i, 1] - pos[i, 1]) * inv_dt
        vz = (npos[i, 2] - pos[i, 2]) * inv_dt
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
        pos[i, 0] = npos[i, 0]
        pos[i, 1] = npos[i, 1]
        pos[i, 2] = npos[i, 2]
        v2 = vx * vx + vy * vy + vz * vz
        if v2 > vmax2:
            vmax2 = v2
    vmax = sqrt(vmax2)
    unstable = vmax > sp[SP_MAX_SPEED]
    return vmax, unstable


@njit(cache=True)
def _run_steps(
    pos,
    vel,
    npos,
    lam,
    dp,
    sp,
    table_mask,
    cell_coords,
    hash_of,
    bucket_start,
    sorted_idx,
    nbrs,
    nbr_cnt,
    iterations,
    prim_type,
    prim_role,
    prim_params,
    coll_pstart,
    coll_pend,
    coll_rot,
    coll_trans,
    coll_prev_rot,
    coll_prev_trans,
    coll_moving,
    coll_bs_body,
    coll_bs_r,
    coll_mu,
    pour_rot_seq,
    pour_trans_seq,
    n_steps,
    kinematic,
    check_every,
    settle_speed,
):
    """Run up to n_steps substeps; collider 0 follows the pose sequence when
    `kinematic`.  With check_every > 0, stop early once max speed falls below
    settle_speed.  Returns (steps_done, vmax, unstable, settled)."""
    vmax = 0.0
    for k in range(n_steps):
        if kinematic:
            for a in range(3):
                for b in range(3):
                    coll_prev_rot[0, a, b] = coll_rot[0, a, b]
                coll_prev_trans[0, a] = coll_trans[0, a]
            for a in range(3):
                for b in range(3):
                    coll_rot[0, a, b] = pour_rot_seq[k, a, b]
                coll_trans[0, a] = pour_trans_seq[k, a]
        vmax, unstable = _substep(
            pos, vel, npos, lam, dp, sp, table_mask, cell_coords, hash_of,
            bucket_start, sorted_idx, nbrs, nbr_cnt, iterations,
            prim_type, prim_role, prim_params,
            coll_pstart, coll_pend, coll_rot, coll_trans,
            coll_prev_rot, coll_prev_trans, coll_moving, coll_bs_body, coll_bs_r,
            coll_mu,
        )
        if unstable:
            return k + 1, vmax, True, False
        if check_every > 0 and (k + 1) % check_every == 0 and vmax < settle_speed:
            return k + 1, vmax, False, True
    return n_steps, vmax, False, vmax < settle_speed
