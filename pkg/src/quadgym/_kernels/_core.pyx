# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled physics kernels.

Scalar-per-environment mirror of ``fallback.py``. Every arithmetic expression
is transcribed with the same operand order and association so both backends
produce bit-identical trajectories (the extension is built with
-ffp-contract=off to keep fused multiply-adds out). When editing, change the
fallback first, then transcribe.

One documented divergence-handling difference: rows already flagged diverged
are skipped here but computed-and-restored in NumPy, so their *log* outputs
(torques, forces, touchdown accumulators) are unspecified; their *state* is
identical (frozen) in both backends.
"""

from libc.math cimport cos, sin, sqrt, fabs, isfinite


cdef inline double _bilin(const double[:, ::1] H, double ox, double oy,
                          double res, double X, double Y) noexcept nogil:
    cdef Py_ssize_t nx = H.shape[0]
    cdef Py_ssize_t ny = H.shape[1]
    cdef double u = (X - ox) / res - 0.5
    cdef double v = (Y - oy) / res - 0.5
    if not isfinite(u):
        u = 0.0
    if not isfinite(v):
        v = 0.0
    if u < 0.0:
        u = 0.0
    elif u > nx - 1.0:
        u = nx - 1.0
    if v < 0.0:
        v = 0.0
    elif v > ny - 1.0:
        v = ny - 1.0
    cdef Py_ssize_t i0 = <Py_ssize_t>u
    cdef Py_ssize_t j0 = <Py_ssize_t>v
    if i0 > nx - 2:
        i0 = nx - 2
    if j0 > ny - 2:
        j0 = ny - 2
    cdef double tx = u - i0
    cdef double ty = v - j0
    return (
        H[i0, j0] * (1.0 - tx) * (1.0 - ty)
        + H[i0 + 1, j0] * tx * (1.0 - ty)
        + H[i0, j0 + 1] * (1.0 - tx) * ty
        + H[i0 + 1, j0 + 1] * tx * ty
    )


def height_scan_batch(const double[:, ::1] H, double ox, double oy, double res,
                      const double[:, ::1] base_pos, const double[::1] yaw,
                      const double[::1] scan_dx, const double[::1] scan_dy,
                      double[:, ::1] out):
    cdef Py_ssize_t N = base_pos.shape[0]
    cdef Py_ssize_t S = scan_dx.shape[0]
    cdef Py_ssize_t i, k
    cdef double c, s, px, py
    with nogil:
        for i in range(N):
            c = cos(yaw[i])
            s = sin(yaw[i])
            for k in range(S):
                px = base_pos[i, 0] + c * scan_dx[k] - s * scan_dy[k]
                py = base_pos[i, 1] + s * scan_dx[k] + c * scan_dy[k]
                out[i, k] = base_pos[i, 2] - _bilin(H, ox, oy, res, px, py)


def physics_step_batch(
    double[:, ::1] pos, double[:, ::1] quat, double[:, ::1] linvel,
    double[:, ::1] angvel, double[:, ::1] q, double[:, ::1] qd,
    unsigned char[:, ::1] contact, double[:, ::1] air, double[:, :, ::1] anchor,
    const double[:, ::1] targets,
    const double[:, ::1] hip_offset, const int[:, ::1] joint_type,
    const double[:, :, ::1] joint_axis, const double[:, :, ::1] link_offset,
    const double[::1] q_lo, const double[::1] q_hi, const double[::1] kp,
    const double[::1] kd, const double[::1] tau_lim, const double[::1] vel_lim,
    const double[::1] refl, double foot_radius, const double[::1] base_dims,
    const double[::1] mass, const double[:, ::1] inertia, const double[::1] mu,
    const double[:, ::1] H, double ox, double oy, double res,
    double kn, double cn, double kt, double ct, double v_slip,
    double g, double dt, int n_substeps, double div_limit,
    double[:, ::1] tau_out, double[:, ::1] qdvel_out, double[:, :, ::1] frc_out,
    double[::1] td_count, double[::1] td_air,
    unsigned char[::1] ill_base, unsigned char[:, ::1] ill_upper,
    unsigned char[:, ::1] ill_lower, unsigned char[::1] diverged,
):
    cdef Py_ssize_t N = pos.shape[0]
    cdef Py_ssize_t D = q.shape[1]
    cdef Py_ssize_t n_legs = joint_type.shape[0]
    cdef Py_ssize_t dpl = joint_type.shape[1]
    cdef Py_ssize_t sub, i, leg, j, k, col
    cdef int seg

    # per-env scratch (dpl <= 4, D <= 16, 4 legs)
    cdef double tau_i[16]
    cdef double tc[16]
    cdef double jax_x[4]
    cdef double jax_y[4]
    cdef double jax_z[4]
    cdef double jorg_x[4]
    cdef double jorg_y[4]
    cdef double jorg_z[4]
    cdef double jc_x[4]
    cdef double jc_y[4]
    cdef double jc_z[4]
    cdef double seg_t[3]
    seg_t[0] = 0.25
    seg_t[1] = 0.5
    seg_t[2] = 0.75

    cdef double px, py, pz, qw, qx, qy, qz, lvx, lvy, lvz, wx, wy, wz
    cdef double r00, r01, r02, r10, r11, r12, r20, r21, r22
    cdef double c00, c01, c02, c10, c11, c12, c20, c21, c22
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double n00, n01, n02, n10, n11, n12, n20, n21, n22
    cdef double hx, hy, hz, ax, ay, az, lx, ly, lz
    cdef double awx, awy, awz, cth, sth, omc, qj, qdj
    cdef double cpx, cpy, cpz, fx, fy, fz, dx, dy, dz
    cdef double rfx, rfy, rfz, vfx, vfy, vfz
    cdef double fsum_x, fsum_y, fsum_z, tsum_x, tsum_y, tsum_z
    cdef double h0, pen, e, dhdx, dhdy, nn, nx_, ny_, nz_, sep, fn, mufn
    cdef double vdotn, vtx, vty, vtz, vt, ft_mag
    cdef double anx, any_, anz, dxs, dys, dzs, ddn, dtx, dty, dtz
    cdef double st_x, st_y, st_z, st_mag, st_scale, dt_mag, spring, r_scale
    cdef double Fx, Fy, Fz, ftx, fty, ftz
    cdef double hbx, hby, hbz, cxs, cys, cx, cy, cz, wxp, wyp, wzp
    cdef double acc_x, acc_y, acc_z, ix, iy, iz
    cdef double t1x, t1y, t1z, t2x, t2y, t2z, hx_, hy_, hz_
    cdef double gy_x, gy_y, gy_z, rhs_x, rhs_y, rhs_z
    cdef double s1x, s1y, s1z, s2x, s2y, s2z, wdx, wdy, wdz
    cdef double lvx_n, lvy_n, lvz_n, wx_n, wy_n, wz_n
    cdef double half, dqw, dqx, dqy, dqz, nqw, nqx, nqy, nqz, qnorm
    cdef double raw, lim, qdd, qd_n, q_n, q_c
    cdef double sx, sy, sz, ta, tb
    cdef double ax_u, ay_u, az_u, bx_u, by_u, bz_u
    cdef bint in_c, was_c, bad

    with nogil:
        for sub in range(n_substeps):
            for i in range(N):
                if diverged[i]:
                    continue

                px = pos[i, 0]; py = pos[i, 1]; pz = pos[i, 2]
                qw = quat[i, 0]; qx = quat[i, 1]; qy = quat[i, 2]; qz = quat[i, 3]
                lvx = linvel[i, 0]; lvy = linvel[i, 1]; lvz = linvel[i, 2]
                wx = angvel[i, 0]; wy = angvel[i, 1]; wz = angvel[i, 2]

                r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
                r01 = 2.0 * (qx * qy - qw * qz)
                r02 = 2.0 * (qx * qz + qw * qy)
                r10 = 2.0 * (qx * qy + qw * qz)
                r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
                r12 = 2.0 * (qy * qz - qw * qx)
                r20 = 2.0 * (qx * qz - qw * qy)
                r21 = 2.0 * (qy * qz + qw * qx)
                r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

                for k in range(D):
                    raw = kp[k] * (targets[i, k] - q[i, k]) - kd[k] * qd[i, k]
                    lim = tau_lim[k]
                    if raw < -lim:
                        raw = -lim
                    elif raw > lim:
                        raw = lim
                    tau_i[k] = raw
                    tc[k] = 0.0

                fsum_x = 0.0; fsum_y = 0.0; fsum_z = 0.0
                tsum_x = 0.0; tsum_y = 0.0; tsum_z = 0.0

                for leg in range(n_legs):
                    hx = hip_offset[leg, 0]
                    hy = hip_offset[leg, 1]
                    hz = hip_offset[leg, 2]
                    cpx = px + (r00 * hx + r01 * hy + r02 * hz)
                    cpy = py + (r10 * hx + r11 * hy + r12 * hz)
                    cpz = pz + (r20 * hx + r21 * hy + r22 * hz)
                    c00 = r00; c01 = r01; c02 = r02
                    c10 = r10; c11 = r11; c12 = r12
                    c20 = r20; c21 = r21; c22 = r22

                    for j in range(dpl):
                        ax = joint_axis[leg, j, 0]
                        ay = joint_axis[leg, j, 1]
                        az = joint_axis[leg, j, 2]
                        awx = c00 * ax + c01 * ay + c02 * az
                        awy = c10 * ax + c11 * ay + c12 * az
                        awz = c20 * ax + c21 * ay + c22 * az
                        jax_x[j] = awx
                        jax_y[j] = awy
                        jax_z[j] = awz
                        jorg_x[j] = cpx
                        jorg_y[j] = cpy
                        jorg_z[j] = cpz
                        qj = q[i, leg * dpl + j]
                        if joint_type[leg, j] == 0:
                            cth = cos(qj)
                            sth = sin(qj)
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
                            c00 = n00; c01 = n01; c02 = n02
                            c10 = n10; c11 = n11; c12 = n12
                            c20 = n20; c21 = n21; c22 = n22
                        else:
                            cpx = cpx + awx * qj
                            cpy = cpy + awy * qj
                            cpz = cpz + awz * qj
                        lx = link_offset[leg, j, 0]
                        ly = link_offset[leg, j, 1]
                        lz = link_offset[leg, j, 2]
                        cpx = cpx + (c00 * lx + c01 * ly + c02 * lz)
                        cpy = cpy + (c10 * lx + c11 * ly + c12 * lz)
                        cpz = cpz + (c20 * lx + c21 * ly + c22 * lz)

                    fx = cpx; fy = cpy; fz = cpz

                    for j in range(dpl):
                        if joint_type[leg, j] == 0:
                            dx = fx - jorg_x[j]
                            dy = fy - jorg_y[j]
                            dz = fz - jorg_z[j]
                            jc_x[j] = jax_y[j] * dz - jax_z[j] * dy
                            jc_y[j] = jax_z[j] * dx - jax_x[j] * dz
                            jc_z[j] = jax_x[j] * dy - jax_y[j] * dx
                        else:
                            jc_x[j] = jax_x[j]
                            jc_y[j] = jax_y[j]
                            jc_z[j] = jax_z[j]

                    rfx = fx - px
                    rfy = fy - py
                    rfz = fz - pz
                    vfx = lvx + (wy * rfz - wz * rfy)
                    vfy = lvy + (wz * rfx - wx * rfz)
                    vfz = lvz + (wx * rfy - wy * rfx)
                    for j in range(dpl):
                        qdj = qd[i, leg * dpl + j]
                        vfx = vfx + jc_x[j] * qdj
                        vfy = vfy + jc_y[j] * qdj
                        vfz = vfz + jc_z[j] * qdj

                    h0 = _bilin(H, ox, oy, res, fx, fy)
                    pen = h0 - (fz - foot_radius)
                    in_c = pen > 0.0
                    if in_c:
                        e = 0.5 * res
                        dhdx = (_bilin(H, ox, oy, res, fx + e, fy)
                                - _bilin(H, ox, oy, res, fx - e, fy)) / res
                        dhdy = (_bilin(H, ox, oy, res, fx, fy + e)
                                - _bilin(H, ox, oy, res, fx, fy - e)) / res
                        nn = sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
                        nx_ = -dhdx / nn
                        ny_ = -dhdy / nn
                        nz_ = 1.0 / nn
                        sep = vfz - (dhdx * vfx + dhdy * vfy)
                        fn = kn * pen - cn * sep
                        if not (fn > 0.0):
                            fn = 0.0
                        mufn = mu[i] * fn

                        vdotn = vfx * nx_ + vfy * ny_ + vfz * nz_
                        vtx = vfx - vdotn * nx_
                        vty = vfy - vdotn * ny_
                        vtz = vfz - vdotn * nz_
                        vt = sqrt(vtx * vtx + vty * vty + vtz * vtz)

                        if vt >= v_slip:
                            ft_mag = ct * vt
                            if not (ft_mag < mufn):
                                ft_mag = mufn
                            ftx = -(ft_mag / vt) * vtx
                            fty = -(ft_mag / vt) * vty
                            ftz = -(ft_mag / vt) * vtz
                            anchor[i, leg, 0] = fx
                            anchor[i, leg, 1] = fy
                            anchor[i, leg, 2] = fz
                        else:
                            anx = anchor[i, leg, 0]
                            any_ = anchor[i, leg, 1]
                            anz = anchor[i, leg, 2]
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
                            st_mag = sqrt(st_x * st_x + st_y * st_y + st_z * st_z)
                            if st_mag > mufn:
                                st_scale = mufn / st_mag
                            else:
                                st_scale = 1.0
                            ftx = st_x * st_scale
                            fty = st_y * st_scale
                            ftz = st_z * st_scale
                            dt_mag = sqrt(dtx * dtx + dty * dty + dtz * dtz)
                            spring = kt * dt_mag
                            if spring > mufn:
                                r_scale = mufn / spring
                            else:
                                r_scale = 1.0
                            anchor[i, leg, 0] = fx - dtx * r_scale
                            anchor[i, leg, 1] = fy - dty * r_scale
                            anchor[i, leg, 2] = fz - dtz * r_scale

                        Fx = fn * nx_ + ftx
                        Fy = fn * ny_ + fty
                        Fz = fn * nz_ + ftz
                    else:
                        Fx = 0.0
                        Fy = 0.0
                        Fz = 0.0
                        anchor[i, leg, 0] = fx
                        anchor[i, leg, 1] = fy
                        anchor[i, leg, 2] = fz

                    was_c = contact[i, leg] != 0
                    if in_c and not was_c:
                        td_count[i] = td_count[i] + 1.0
                        td_air[i] = td_air[i] + air[i, leg]
                    if in_c:
                        air[i, leg] = 0.0
                        contact[i, leg] = 1
                    else:
                        air[i, leg] = air[i, leg] + dt
                        contact[i, leg] = 0

                    fsum_x = fsum_x + Fx
                    fsum_y = fsum_y + Fy
                    fsum_z = fsum_z + Fz
                    tsum_x = tsum_x + (rfy * Fz - rfz * Fy)
                    tsum_y = tsum_y + (rfz * Fx - rfx * Fz)
                    tsum_z = tsum_z + (rfx * Fy - rfy * Fx)
                    for j in range(dpl):
                        tc[leg * dpl + j] = jc_x[j] * Fx + jc_y[j] * Fy + jc_z[j] * Fz

                    frc_out[i, leg, 0] = Fx
                    frc_out[i, leg, 1] = Fy
                    frc_out[i, leg, 2] = Fz

                    ax_u = jorg_x[1]; ay_u = jorg_y[1]; az_u = jorg_z[1]
                    bx_u = jorg_x[2]; by_u = jorg_y[2]; bz_u = jorg_z[2]
                    for seg in range(3):
                        ta = seg_t[seg]
                        sx = ax_u + ta * (bx_u - ax_u)
                        sy = ay_u + ta * (by_u - ay_u)
                        sz = az_u + ta * (bz_u - az_u)
                        if sz < _bilin(H, ox, oy, res, sx, sy):
                            ill_upper[i, leg] = 1
                    for seg in range(3):
                        ta = seg_t[seg]
                        sx = bx_u + ta * (fx - bx_u)
                        sy = by_u + ta * (fy - by_u)
                        sz = bz_u + ta * (fz - bz_u)
                        if sz < _bilin(H, ox, oy, res, sx, sy):
                            ill_lower[i, leg] = 1

                hbx = 0.5 * base_dims[0]
                hby = 0.5 * base_dims[1]
                hbz = 0.5 * base_dims[2]
                for seg in range(4):
                    if seg == 0:
                        cxs = 1.0; cys = 1.0
                    elif seg == 1:
                        cxs = 1.0; cys = -1.0
                    elif seg == 2:
                        cxs = -1.0; cys = 1.0
                    else:
                        cxs = -1.0; cys = -1.0
                    cx = cxs * hbx
                    cy = cys * hby
                    cz = -hbz
                    wxp = px + (r00 * cx + r01 * cy + r02 * cz)
                    wyp = py + (r10 * cx + r11 * cy + r12 * cz)
                    wzp = pz + (r20 * cx + r21 * cy + r22 * cz)
                    if wzp < _bilin(H, ox, oy, res, wxp, wyp):
                        ill_base[i] = 1

                acc_x = fsum_x / mass[i]
                acc_y = fsum_y / mass[i]
                acc_z = fsum_z / mass[i] - g
                lvx_n = lvx + dt * acc_x
                lvy_n = lvy + dt * acc_y
                lvz_n = lvz + dt * acc_z

                ix = inertia[i, 0]; iy = inertia[i, 1]; iz = inertia[i, 2]
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

                linvel[i, 0] = lvx_n
                linvel[i, 1] = lvy_n
                linvel[i, 2] = lvz_n
                angvel[i, 0] = wx_n
                angvel[i, 1] = wy_n
                angvel[i, 2] = wz_n
                pos[i, 0] = px + dt * lvx_n
                pos[i, 1] = py + dt * lvy_n
                pos[i, 2] = pz + dt * lvz_n

                half = 0.5 * dt
                dqw = -wx_n * qx - wy_n * qy - wz_n * qz
                dqx = wx_n * qw + wy_n * qz - wz_n * qy
                dqy = wy_n * qw + wz_n * qx - wx_n * qz
                dqz = wz_n * qw + wx_n * qy - wy_n * qx
                nqw = qw + half * dqw
                nqx = qx + half * dqx
                nqy = qy + half * dqy
                nqz = qz + half * dqz
                qnorm = sqrt(nqw * nqw + nqx * nqx + nqy * nqy + nqz * nqz)
                quat[i, 0] = nqw / qnorm
                quat[i, 1] = nqx / qnorm
                quat[i, 2] = nqy / qnorm
                quat[i, 3] = nqz / qnorm

                for k in range(D):
                    qdd = (tau_i[k] + tc[k]) / refl[k]
                    qd_n = qd[i, k] + dt * qdd
                    if qd_n < -vel_lim[k]:
                        qd_n = -vel_lim[k]
                    elif qd_n > vel_lim[k]:
                        qd_n = vel_lim[k]
                    q_n = q[i, k] + dt * qd_n
                    q_c = q_n
                    if q_c < q_lo[k]:
                        q_c = q_lo[k]
                    elif q_c > q_hi[k]:
                        q_c = q_hi[k]
                    if q_c != q_n:
                        qd_n = 0.0
                    q[i, k] = q_c
                    qd[i, k] = qd_n
                    tau_out[i, k] = tau_i[k]
                    qdvel_out[i, k] = qd_n

                bad = False
                for k in range(3):
                    if not isfinite(pos[i, k]) or fabs(pos[i, k]) > div_limit:
                        bad = True
                    if not isfinite(linvel[i, k]) or fabs(linvel[i, k]) > div_limit:
                        bad = True
                    if not isfinite(angvel[i, k]) or fabs(angvel[i, k]) > div_limit:
                        bad = True
                for k in range(D):
                    if not isfinite(q[i, k]) or fabs(q[i, k]) > div_limit:
                        bad = True
                    if not isfinite(qd[i, k]) or fabs(qd[i, k]) > div_limit:
                        bad = True
                if bad:
                    diverged[i] = 1
