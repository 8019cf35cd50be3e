"""Vectorized NumPy physics kernels (reference backend).

The compiled backend reimplements these functions scalar-per-environment;
both must produce bit-identical results. To make that possible every
floating-point operation here is written out component-wise, in a fixed
evaluation order, with no BLAS/matmul calls and no fused operations. Keep the
two implementations in lockstep when editing.

State layout (all float64, C-contiguous, shape leading dim N = environments):
    pos (N,3), quat (N,4) wxyz, linvel (N,3) world, angvel (N,3) world,
    q (N,D), qd (N,D), contact (N,4) uint8, air (N,4) seconds,
    anchor (N,4,3) world tangential-spring anchor per foot.

Terrain is the stitched global grid (GX,GY) with origin (ox,oy) and square
cells of size `res`; heights are cell-centered.
"""

import numpy as np

# Fractions along each leg segment sampled for illegal-contact tests.
_SEG_T = (0.25, 0.5, 0.75)


def _bilinear(H, ox, oy, res, X, Y):
    """Clamped bilinear interpolation at world (X, Y); arrays in, array out."""
    nx, ny = H.shape
    u = (X - ox) / res - 0.5
    v = (Y - oy) / res - 0.5
    u = np.where(np.isfinite(u), u, 0.0)
    v = np.where(np.isfinite(v), v, 0.0)
    u = np.clip(u, 0.0, nx - 1.0)
    v = np.clip(v, 0.0, ny - 1.0)
    i0 = np.minimum(u.astype(np.intp), nx - 2)
    j0 = np.minimum(v.astype(np.intp), ny - 2)
    tx = u - i0
    ty = v - j0
    return (
        H[i0, j0] * (1.0 - tx) * (1.0 - ty)
        + H[i0 + 1, j0] * tx * (1.0 - ty)
        + H[i0, j0 + 1] * (1.0 - tx) * ty
        + H[i0 + 1, j0 + 1] * tx * ty
    )


def height_scan_batch(H, ox, oy, res, base_pos, yaw, scan_dx, scan_dy, out):
    """Relative heights base_z - terrain on a yaw-rotated body grid.

    scan_dx/scan_dy: flattened body-frame offsets (S,); out: (N, S).
    """
    c = np.cos(yaw)
    s = np.sin(yaw)
    px = base_pos[:, 0:1] + c[:, None] * scan_dx[None, :] - s[:, None] * scan_dy[None, :]
    py = base_pos[:, 1:2] + s[:, None] * scan_dx[None, :] + c[:, None] * scan_dy[None, :]
    out[:, :] = base_pos[:, 2:3] - _bilinear(H, ox, oy, res, px, py)


def physics_step_batch(
    # state, updated in place
    pos, quat, linvel, angvel, q, qd, contact, air, anchor,
    # control input, held constant across substeps
    targets,
    # packed morphology (shared across envs)
    hip_offset, joint_type, joint_axis, link_offset,
    q_lo, q_hi, kp, kd, tau_lim, vel_lim, refl,
    foot_radius, base_dims,
    # per-env physical parameters
    mass, inertia, mu,
    # terrain
    H, ox, oy, res,
    # contact parameters
    kn, cn, kt, ct, v_slip,
    # integration
    g, dt, n_substeps, div_limit,
    # outputs: last-substep snapshots and per-call accumulators
    tau_out, qdvel_out, frc_out,
    td_count, td_air, ill_base, ill_upper, ill_lower, diverged,
):
    """Advance every environment n_substeps physics steps of length dt.

    Accumulator outputs (td_*, ill_*) are NOT cleared here; the caller zeroes
    them once per control period. Environments flagged in `diverged` are
    frozen. Returns None; all results land in the passed arrays.
    """
    N = pos.shape[0]
    n_legs, dpl = joint_type.shape
    state_arrays = (pos, quat, linvel, angvel, q, qd, contact, air, anchor)

    with np.errstate(all="ignore"):
        for _ in range(n_substeps):
            frozen = diverged.astype(bool)
            any_frozen = bool(frozen.any())
            if any_frozen:
                snapshot = [a.copy() for a in state_arrays]

            px, py, pz = pos[:, 0], pos[:, 1], pos[:, 2]
            qw, qx, qy, qz = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
            lvx, lvy, lvz = linvel[:, 0], linvel[:, 1], linvel[:, 2]
            wx, wy, wz = angvel[:, 0], angvel[:, 1], angvel[:, 2]

            # Base rotation matrix from the unit quaternion.
            r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
            r01 = 2.0 * (qx * qy - qw * qz)
            r02 = 2.0 * (qx * qz + qw * qy)
            r10 = 2.0 * (qx * qy + qw * qz)
            r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
            r12 = 2.0 * (qy * qz - qw * qx)
            r20 = 2.0 * (qx * qz - qw * qy)
            r21 = 2.0 * (qy * qz + qw * qx)
            r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

            # PD torques from pre-step joint state.
            tau = kp[None, :] * (targets - q) - kd[None, :] * qd
            tau = np.clip(tau, -tau_lim[None, :], tau_lim[None, :])

            fsum_x = np.zeros(N)
            fsum_y = np.zeros(N)
            fsum_z = np.zeros(N)
            tsum_x = np.zeros(N)
            tsum_y = np.zeros(N)
            tsum_z = np.zeros(N)
            tau_contact = np.zeros_like(q)

            for leg in range(n_legs):
                # --- forward kinematics along the chain (world frame) ---
                hx, hy, hz = hip_offset[leg]
                cpx = px + (r00 * hx + r01 * hy + r02 * hz)
                cpy = py + (r10 * hx + r11 * hy + r12 * hz)
                cpz = pz + (r20 * hx + r21 * hy + r22 * hz)
                c00, c01, c02 = r00.copy(), r01.copy(), r02.copy()
                c10, c11, c12 = r10.copy(), r11.copy(), r12.copy()
                c20, c21, c22 = r20.copy(), r21.copy(), r22.copy()

                jax_x, jax_y, jax_z = [], [], []
                jorg_x, jorg_y, jorg_z = [], [], []
                for j in range(dpl):
                    ax, ay, az = joint_axis[leg, j]
                    awx = c00 * ax + c01 * ay + c02 * az
                    awy = c10 * ax + c11 * ay + c12 * az
                    awz = c20 * ax + c21 * ay + c22 * az
                    jax_x.append(awx)
                    jax_y.append(awy)
                    jax_z.append(awz)
                    jorg_x.append(cpx.copy())
                    jorg_y.append(cpy.copy())
                    jorg_z.append(cpz.copy())
                    qj = q[:, leg * dpl + j]
                    if joint_type[leg, j] == 0:  # revolute: rotate chain frame
                        cth = np.cos(qj)
                        sth = np.sin(qj)
                        omc = 1.0 - cth
                        m00 = cth + ax * ax * omc
                        m01 = ax * ay * omc - az * sth
                        m02 = ax * az * omc + ay * sth
                        m10 = ay * ax * omc + az * sth
                        m11 = cth + ay * ay * omc
                        m12 = ay * az * omc - ax * sth
                        m20 = az * ax * omc - ay * sth
                        m21 = az * ay * omc + ax * sth
                        m22 = cth + az * az * omc
                        n00 = c00 * m00 + c01 * m10 + c02 * m20
                        n01 = c00 * m01 + c01 * m11 + c02 * m21
                        n02 = c00 * m02 + c01 * m12 + c02 * m22
                        n10 = c10 * m00 + c11 * m10 + c12 * m20
                        n11 = c10 * m01 + c11 * m11 + c12 * m21
                        n12 = c10 * m02 + c11 * m12 + c12 * m22
                        n20 = c20 * m00 + c21 * m10 + c22 * m20
                        n21 = c20 * m01 + c21 * m11 + c22 * m21
                        n22 = c20 * m02 + c21 * m12 + c22 * m22
                        c00, c01, c02 = n00, n01, n02
                        c10, c11, c12 = n10, n11, n12
                        c20, c21, c22 = n20, n21, n22
                    else:  # prismatic: translate along the world joint axis
                        cpx = cpx + awx * qj
                        cpy = cpy + awy * qj
                        cpz = cpz + awz * qj
                    lx, ly, lz = link_offset[leg, j]
                    cpx = cpx + (c00 * lx + c01 * ly + c02 * lz)
                    cpy = cpy + (c10 * lx + c11 * ly + c12 * lz)
                    cpz = cpz + (c20 * lx + c21 * ly + c22 * lz)

                fx, fy, fz = cpx, cpy, cpz  # foot center

                # --- Jacobian columns (world frame) ---
                jc_x, jc_y, jc_z = [], [], []
                for j in range(dpl):
                    if joint_type[leg, j] == 0:
                        dx = fx - jorg_x[j]
                        dy = fy - jorg_y[j]
                        dz = fz - jorg_z[j]
                        jc_x.append(jax_y[j] * dz - jax_z[j] * dy)
                        jc_y.append(jax_z[j] * dx - jax_x[j] * dz)
                        jc_z.append(jax_x[j] * dy - jax_y[j] * dx)
                    else:
                        jc_x.append(jax_x[j])
                        jc_y.append(jax_y[j])
                        jc_z.append(jax_z[j])

                # --- foot velocity: base motion plus joint motion ---
                rfx = fx - px
                rfy = fy - py
                rfz = fz - pz
                vfx = lvx + (wy * rfz - wz * rfy)
                vfy = lvy + (wz * rfx - wx * rfz)
                vfz = lvz + (wx * rfy - wy * rfx)
                for j in range(dpl):
                    qdj = qd[:, leg * dpl + j]
                    vfx = vfx + jc_x[j] * qdj
                    vfy = vfy + jc_y[j] * qdj
                    vfz = vfz + jc_z[j] * qdj

                # --- penalty contact ---
                h0 = _bilinear(H, ox, oy, res, fx, fy)
                pen = h0 - (fz - foot_radius)
                in_c = pen > 0.0
                e = 0.5 * res
                dhdx = (
                    _bilinear(H, ox, oy, res, fx + e, fy)
                    - _bilinear(H, ox, oy, res, fx - e, fy)
                ) / res
                dhdy = (
                    _bilinear(H, ox, oy, res, fx, fy + e)
                    - _bilinear(H, ox, oy, res, fx, fy - e)
                ) / res
                nn = np.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
                nx_ = -dhdx / nn
                ny_ = -dhdy / nn
                nz_ = 1.0 / nn
                sep = vfz - (dhdx * vfx + dhdy * vfy)
                fn = kn * pen - cn * sep
                fn = np.where(fn > 0.0, fn, 0.0)
                fn = np.where(in_c, fn, 0.0)
                mufn = mu * fn

                vdotn = vfx * nx_ + vfy * ny_ + vfz * nz_
                vtx = vfx - vdotn * nx_
                vty = vfy - vdotn * ny_
                vtz = vfz - vdotn * nz_
                vt = np.sqrt(vtx * vtx + vty * vty + vtz * vtz)
                slide = vt >= v_slip

                # sliding branch: viscous magnitude saturated by the cone
                ft_mag = ct * vt
                ft_mag = np.where(ft_mag < mufn, ft_mag, mufn)
                safe_vt = np.where(vt > 0.0, vt, 1.0)
                sl_x = -(ft_mag / safe_vt) * vtx
                sl_y = -(ft_mag / safe_vt) * vty
                sl_z = -(ft_mag / safe_vt) * vtz

                # stick branch: spring to the touchdown anchor, cone-clamped
                anx = anchor[:, leg, 0]
                any_ = anchor[:, leg, 1]
                anz = anchor[:, leg, 2]
                dxs = fx - anx
                dys = fy - any_
                dzs = fz - anz
                ddn = dxs * nx_ + dys * ny_ + dzs * nz_
                dtx = dxs - ddn * nx_
                dty = dys - ddn * ny_
                dtz = dzs - ddn * nz_
                st_x = -kt * dtx - ct * vtx
                st_y = -kt * dty - ct * vty
                st_z = -kt * dtz - ct * vtz
                st_mag = np.sqrt(st_x * st_x + st_y * st_y + st_z * st_z)
                over = st_mag > mufn
                safe_st = np.where(st_mag > 0.0, st_mag, 1.0)
                st_scale = np.where(over, mufn / safe_st, 1.0)
                st_x = st_x * st_scale
                st_y = st_y * st_scale
                st_z = st_z * st_scale
                # retract the anchor so the spring stretch stays on the cone
                dt_mag = np.sqrt(dtx * dtx + dty * dty + dtz * dtz)
                spring = kt * dt_mag
                retract = spring > mufn
                safe_spring = np.where(spring > 0.0, spring, 1.0)
                r_scale = np.where(retract, mufn / safe_spring, 1.0)
                st_anx = fx - dtx * r_scale
                st_any = fy - dty * r_scale
                st_anz = fz - dtz * r_scale

                ftx = np.where(slide, sl_x, st_x)
                fty = np.where(slide, sl_y, st_y)
                ftz = np.where(slide, sl_z, st_z)
                Fx = fn * nx_ + ftx
                Fy = fn * ny_ + fty
                Fz = fn * nz_ + ftz
                Fx = np.where(in_c, Fx, 0.0)
                Fy = np.where(in_c, Fy, 0.0)
                Fz = np.where(in_c, Fz, 0.0)

                # anchors: airborne and sliding feet track the foot point
                new_anx = np.where(in_c, np.where(slide, fx, st_anx), fx)
                new_any = np.where(in_c, np.where(slide, fy, st_any), fy)
                new_anz = np.where(in_c, np.where(slide, fz, st_anz), fz)
                anchor[:, leg, 0] = new_anx
                anchor[:, leg, 1] = new_any
                anchor[:, leg, 2] = new_anz

                # contact bookkeeping: air time resets the step contact begins
                was_c = contact[:, leg] != 0
                touchdown = in_c & ~was_c
                td_count += touchdown.astype(np.float64)
                td_air += np.where(touchdown, air[:, leg], 0.0)
                air[:, leg] = np.where(in_c, 0.0, air[:, leg] + dt)
                contact[:, leg] = in_c.astype(np.uint8)

                fsum_x = fsum_x + Fx
                fsum_y = fsum_y + Fy
                fsum_z = fsum_z + Fz
                tsum_x = tsum_x + (rfy * Fz - rfz * Fy)
                tsum_y = tsum_y + (rfz * Fx - rfx * Fz)
                tsum_z = tsum_z + (rfx * Fy - rfy * Fx)
                for j in range(dpl):
                    tau_contact[:, leg * dpl + j] = jc_x[j] * Fx + jc_y[j] * Fy + jc_z[j] * Fz

                frc_out[:, leg, 0] = Fx
                frc_out[:, leg, 1] = Fy
                frc_out[:, leg, 2] = Fz

                # --- illegal leg-segment contact (centerline below surface) ---
                # upper leg: hip-pitch origin -> knee origin; lower: knee -> foot
                ax_, ay_, az_ = jorg_x[1], jorg_y[1], jorg_z[1]
                bx_, by_, bz_ = jorg_x[2], jorg_y[2], jorg_z[2]
                for t in _SEG_T:
                    sx = ax_ + t * (bx_ - ax_)
                    sy = ay_ + t * (by_ - ay_)
                    sz = az_ + t * (bz_ - az_)
                    below = sz < _bilinear(H, ox, oy, res, sx, sy)
                    ill_upper[below, leg] = 1
                for t in _SEG_T:
                    sx = bx_ + t * (fx - bx_)
                    sy = by_ + t * (fy - by_)
                    sz = bz_ + t * (fz - bz_)
                    below = sz < _bilinear(H, ox, oy, res, sx, sy)
                    ill_lower[below, leg] = 1

            # --- base-box corner vs terrain ---
            hbx = 0.5 * base_dims[0]
            hby = 0.5 * base_dims[1]
            hbz = 0.5 * base_dims[2]
            for cx_s, cy_s in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
                cx = cx_s * hbx
                cy = cy_s * hby
                cz = -hbz
                wxp = px + (r00 * cx + r01 * cy + r02 * cz)
                wyp = py + (r10 * cx + r11 * cy + r12 * cz)
                wzp = pz + (r20 * cx + r21 * cy + r22 * cz)
                below = wzp < _bilinear(H, ox, oy, res, wxp, wyp)
                ill_base[below] = 1

            # --- base linear update (semi-implicit) ---
            acc_x = fsum_x / mass
            acc_y = fsum_y / mass
            acc_z = fsum_z / mass - g
            lvx_n = lvx + dt * acc_x
            lvy_n = lvy + dt * acc_y
            lvz_n = lvz + dt * acc_z

            # --- base angular update with gyroscopic term ---
            # world inertia applied via body frame: I_w v = R D R^T v
            ix, iy, iz = inertia[:, 0], inertia[:, 1], inertia[:, 2]
            t1x = r00 * wx + r10 * wy + r20 * wz
            t1y = r01 * wx + r11 * wy + r21 * wz
            t1z = r02 * wx + r12 * wy + r22 * wz
            t2x = ix * t1x
            t2y = iy * t1y
            t2z = iz * t1z
            hx_ = r00 * t2x + r01 * t2y + r02 * t2z
            hy_ = r10 * t2x + r11 * t2y + r12 * t2z
            hz_ = r20 * t2x + r21 * t2y + r22 * t2z
            gy_x = wy * hz_ - wz * hy_
            gy_y = wz * hx_ - wx * hz_
            gy_z = wx * hy_ - wy * hx_
            rhs_x = tsum_x - gy_x
            rhs_y = tsum_y - gy_y
            rhs_z = tsum_z - gy_z
            s1x = r00 * rhs_x + r10 * rhs_y + r20 * rhs_z
            s1y = r01 * rhs_x + r11 * rhs_y + r21 * rhs_z
            s1z = r02 * rhs_x + r12 * rhs_y + r22 * rhs_z
            s2x = s1x / ix
            s2y = s1y / iy
            s2z = s1z / iz
            wdx = r00 * s2x + r01 * s2y + r02 * s2z
            wdy = r10 * s2x + r11 * s2y + r12 * s2z
            wdz = r20 * s2x + r21 * s2y + r22 * s2z
            wx_n = wx + dt * wdx
            wy_n = wy + dt * wdy
            wz_n = wz + dt * wdz

            linvel[:, 0] = lvx_n
            linvel[:, 1] = lvy_n
            linvel[:, 2] = lvz_n
            angvel[:, 0] = wx_n
            angvel[:, 1] = wy_n
            angvel[:, 2] = wz_n
            pos[:, 0] = px + dt * lvx_n
            pos[:, 1] = py + dt * lvy_n
            pos[:, 2] = pz + dt * lvz_n

            # quaternion: qdot = 0.5 * (0, w) x q, then renormalize
            half = 0.5 * dt
            dqw = -wx_n * qx - wy_n * qy - wz_n * qz
            dqx = wx_n * qw + wy_n * qz - wz_n * qy
            dqy = wy_n * qw + wz_n * qx - wx_n * qz
            dqz = wz_n * qw + wx_n * qy - wy_n * qx
            nqw = qw + half * dqw
            nqx = qx + half * dqx
            nqy = qy + half * dqy
            nqz = qz + half * dqz
            qnorm = np.sqrt(nqw * nqw + nqx * nqx + nqy * nqy + nqz * nqz)
            quat[:, 0] = nqw / qnorm
            quat[:, 1] = nqx / qnorm
            quat[:, 2] = nqy / qnorm
            quat[:, 3] = nqz / qnorm

            # --- joint update: reflected-inertia model ---
            qdd = (tau + tau_contact) / refl[None, :]
            qd_n = qd + dt * qdd
            qd_n = np.clip(qd_n, -vel_lim[None, :], vel_lim[None, :])
            q_n = q + dt * qd_n
            q_c = np.clip(q_n, q_lo[None, :], q_hi[None, :])
            qd_n = np.where(q_c != q_n, 0.0, qd_n)
            q[:, :] = q_c
            qd[:, :] = qd_n

            tau_out[:, :] = tau
            qdvel_out[:, :] = qd_n

            # --- divergence detection ---
            bad = np.zeros(N, dtype=bool)
            for arr in (pos, linvel, angvel, q, qd):
                bad |= (~np.isfinite(arr) | (np.abs(arr) > div_limit)).any(axis=1)
            diverged[bad] = 1

            if any_frozen:
                for dst, src in zip(state_arrays, snapshot):
                    dst[frozen] = src[frozen]
