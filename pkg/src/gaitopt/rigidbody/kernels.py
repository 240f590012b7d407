"""Compiled rigid-body and contact kernels.

Everything in here works on the flat tuple produced by
:meth:`gaitopt.rigidbody.model.RigidBodyModel.packed`, so that the
rollout and linearization loops can run without touching Python objects.

Spatial vectors are ordered ``(angular, linear)`` and expressed in body
coordinates.  The floating base velocity is the body-frame twist, which is
also what the state vector stores.
"""

import math

import numpy as np
from numba import njit

BASE_FIXED = 0
BASE_PLANAR = 1
BASE_SPATIAL = 2

JOINT_REVOLUTE = 0
JOINT_PRISMATIC = 1
JOINT_BASE = 2

INTEGRATOR_EULER = 0
INTEGRATOR_RK4 = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_GIMBAL = 2

GIMBAL_MARGIN = 1e-3

# packed model layout
M_BTYPE = 0
M_PARENT = 1
M_JTYPE = 2
M_AXIS = 3
M_TREE_R = 4
M_TREE_P = 5
M_INERTIA = 6
M_DOF = 7
M_FOOT_BODY = 8
M_FOOT_OFFSET = 9
M_GRAVITY = 10
M_ACT_DOF = 11


# ---------------------------------------------------------------------------
# small linear algebra helpers


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@njit(cache=True)
def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@njit(cache=True)
def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@njit(cache=True)
def _d_rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


@njit(cache=True)
def _d_rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


@njit(cache=True)
def _d_rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


@njit(cache=True)
def _axis_angle(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


@njit(cache=True)
def _axis_angle_into(axis, angle, out):
    x, y, z = axis[0], axis[1], axis[2]
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    out[0, 0] = c + x * x * C
    out[0, 1] = x * y * C - z * s
    out[0, 2] = x * z * C + y * s
    out[1, 0] = y * x * C + z * s
    out[1, 1] = c + y * y * C
    out[1, 2] = y * z * C - x * s
    out[2, 0] = z * x * C - y * s
    out[2, 1] = z * y * C + x * s
    out[2, 2] = c + z * z * C


@njit(cache=True)
def rpy_matrix(roll, pitch, yaw):
    """World-from-body rotation for roll-pitch-yaw angles (R = Rz Ry Rx)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@njit(cache=True)
def _mv6(X, v, out):
    for i in range(6):
        acc = 0.0
        for j in range(6):
            acc += X[i, j] * v[j]
        out[i] = acc


@njit(cache=True)
def _mtv6(X, v, out):
    for i in range(6):
        acc = 0.0
        for j in range(6):
            acc += X[j, i] * v[j]
        out[i] = acc


@njit(cache=True)
def _xform(E, r, X):
    """Motion transform child<-parent given rotation E (child<-parent) and
    the child origin r in parent coordinates."""
    for i in range(6):
        for j in range(6):
            X[i, j] = 0.0
    for i in range(3):
        for j in range(3):
            X[i, j] = E[i, j]
            X[i + 3, j + 3] = E[i, j]
    # lower-left block: -E [r]x
    for i in range(3):
        X[i + 3, 0] = -(E[i, 1] * r[2] - E[i, 2] * r[1])
        X[i + 3, 1] = -(E[i, 2] * r[0] - E[i, 0] * r[2])
        X[i + 3, 2] = -(E[i, 0] * r[1] - E[i, 1] * r[0])


@njit(cache=True)
def _crm_mul(v, m, out):
    # motion cross product v x m
    out[0] = v[1] * m[2] - v[2] * m[1]
    out[1] = v[2] * m[0] - v[0] * m[2]
    out[2] = v[0] * m[1] - v[1] * m[0]
    out[3] = v[1] * m[5] - v[2] * m[4] + v[4] * m[2] - v[5] * m[1]
    out[4] = v[2] * m[3] - v[0] * m[5] + v[5] * m[0] - v[3] * m[2]
    out[5] = v[0] * m[4] - v[1] * m[3] + v[3] * m[1] - v[4] * m[0]


@njit(cache=True)
def _crf_mul(v, f, out):
    # force cross product v x* f
    out[0] = v[1] * f[2] - v[2] * f[1] + v[4] * f[5] - v[5] * f[4]
    out[1] = v[2] * f[0] - v[0] * f[2] + v[5] * f[3] - v[3] * f[5]
    out[2] = v[0] * f[1] - v[1] * f[0] + v[3] * f[4] - v[4] * f[3]
    out[3] = v[1] * f[5] - v[2] * f[4]
    out[4] = v[2] * f[3] - v[0] * f[5]
    out[5] = v[0] * f[4] - v[1] * f[3]


@njit(cache=True)
def spatial_inertia(mass, com, inertia_com):
    """6x6 spatial inertia about the body origin."""
    out = np.zeros((6, 6))
    cx = np.array(
        [[0.0, -com[2], com[1]], [com[2], 0.0, -com[0]], [-com[1], com[0], 0.0]]
    )
    out[:3, :3] = inertia_com + mass * (cx @ cx.T)
    out[:3, 3:] = mass * cx
    out[3:, :3] = mass * cx.T
    for i in range(3):
        out[3 + i, 3 + i] = mass
    return out


# ---------------------------------------------------------------------------
# model queries


@njit(cache=True)
def base_dofs(btype):
    if btype == BASE_SPATIAL:
        return 6
    if btype == BASE_PLANAR:
        return 3
    return 0


@njit(cache=True)
def _base_column(btype, c):
    # 6D motion component spanned by base coordinate c (planar: wy, vx, vz)
    if btype == BASE_SPATIAL:
        return c
    return 2 * c + 1


@njit(cache=True)
def base_pose(btype, qb):
    """World-from-base rotation and base origin for the base coordinates."""
    if btype == BASE_SPATIAL:
        R = rpy_matrix(qb[0], qb[1], qb[2])
        p = np.array([qb[3], qb[4], qb[5]])
    else:
        R = _rot_y(qb[0])
        p = np.array([qb[1], 0.0, qb[2]])
    return R, p


@njit(cache=True)
def gimbal_ok(btype, q):
    if btype == BASE_SPATIAL:
        return abs(abs(q[1]) - 0.5 * math.pi) >= GIMBAL_MARGIN
    return True


@njit(cache=True)
def _mm3(A, B, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@njit(cache=True)
def kinematics(model, q):
    """Per-body motion transforms (child<-parent) and world poses."""
    btype = model[M_BTYPE]
    parent = model[M_PARENT]
    jtype = model[M_JTYPE]
    axis = model[M_AXIS]
    tree_R = model[M_TREE_R]
    tree_p = model[M_TREE_P]
    dof = model[M_DOF]
    nb = parent.shape[0]
    Xup = np.empty((nb, 6, 6))
    Rw = np.empty((nb, 3, 3))
    pw = np.empty((nb, 3))
    R_pc = np.empty((3, 3))
    E = np.empty((3, 3))
    Rj = np.empty((3, 3))
    r_pc = np.empty(3)
    for i in range(nb):
        jt = jtype[i]
        if jt == JOINT_BASE:
            Rb, pb = base_pose(btype, q[0 : base_dofs(btype)])
            R_pc[:, :] = Rb
            r_pc[:] = pb
        elif jt == JOINT_REVOLUTE:
            _axis_angle_into(axis[i], q[dof[i]], Rj)
            _mm3(tree_R[i], Rj, R_pc)
            r_pc[:] = tree_p[i]
        else:
            R_pc[:, :] = tree_R[i]
            for r in range(3):
                r_pc[r] = tree_p[i, r] + (
                    tree_R[i, r, 0] * axis[i, 0]
                    + tree_R[i, r, 1] * axis[i, 1]
                    + tree_R[i, r, 2] * axis[i, 2]
                ) * q[dof[i]]
        for r in range(3):
            for c in range(3):
                E[r, c] = R_pc[c, r]
        _xform(E, r_pc, Xup[i])
        p = parent[i]
        if p < 0:
            Rw[i] = R_pc
            pw[i] = r_pc
        else:
            _mm3(Rw[p], R_pc, Rw[i])
            for r in range(3):
                pw[i, r] = pw[p, r] + Rw[p, r, 0] * r_pc[0] + Rw[p, r, 1] * r_pc[1] + Rw[p, r, 2] * r_pc[2]
    return Xup, Rw, pw


@njit(cache=True)
def _joint_motion(jtype, axis_i, out):
    for k in range(6):
        out[k] = 0.0
    if jtype == JOINT_REVOLUTE:
        out[0], out[1], out[2] = axis_i[0], axis_i[1], axis_i[2]
    else:
        out[3], out[4], out[5] = axis_i[0], axis_i[1], axis_i[2]


@njit(cache=True)
def rnea(model, Xup, qd, qdd, with_gravity, fext):
    """Recursive Newton-Euler inverse dynamics.

    ``fext`` holds per-body external spatial forces in body coordinates
    (pass an empty (0, 6) array for none).  Returns generalized forces.
    """
    btype = model[M_BTYPE]
    parent = model[M_PARENT]
    jtype = model[M_JTYPE]
    axis = model[M_AXIS]
    inertia = model[M_INERTIA]
    dof = model[M_DOF]
    g = model[M_GRAVITY]
    nb = parent.shape[0]
    nv = qd.shape[0]
    v = np.zeros((nb, 6))
    a = np.zeros((nb, 6))
    f = np.zeros((nb, 6))
    a_world = np.zeros(6)
    if with_gravity:
        a_world[3] = -g[0]
        a_world[4] = -g[1]
        a_world[5] = -g[2]
    s = np.empty(6)
    vJ = np.empty(6)
    tmp = np.empty(6)
    tmp2 = np.empty(6)
    for i in range(nb):
        p = parent[i]
        if jtype[i] == JOINT_BASE:
            for k in range(6):
                vJ[k] = 0.0
                tmp2[k] = 0.0
            for c in range(base_dofs(btype)):
                vJ[_base_column(btype, c)] = qd[c]
                tmp2[_base_column(btype, c)] = qdd[c]
            _mv6(Xup[i], a_world, tmp)
            for k in range(6):
                v[i, k] = vJ[k]
                a[i, k] = tmp[k] + tmp2[k]
        else:
            _joint_motion(jtype[i], axis[i], s)
            d = dof[i]
            for k in range(6):
                vJ[k] = s[k] * qd[d]
            if p >= 0:
                _mv6(Xup[i], v[p], tmp)
                for k in range(6):
                    v[i, k] = tmp[k] + vJ[k]
                _mv6(Xup[i], a[p], tmp)
            else:
                for k in range(6):
                    v[i, k] = vJ[k]
                _mv6(Xup[i], a_world, tmp)
            _crm_mul(v[i], vJ, tmp2)
            for k in range(6):
                a[i, k] = tmp[k] + s[k] * qdd[d] + tmp2[k]
        # f = I a + v x* I v
        _mv6(inertia[i], a[i], tmp)
        _mv6(inertia[i], v[i], tmp2)
        _crf_mul(v[i], tmp2, vJ)
        for k in range(6):
            f[i, k] = tmp[k] + vJ[k]
        if fext.shape[0] > 0:
            for k in range(6):
                f[i, k] -= fext[i, k]
    tau = np.zeros(nv)
    for i in range(nb - 1, -1, -1):
        if jtype[i] == JOINT_BASE:
            for c in range(base_dofs(btype)):
                tau[c] = f[i, _base_column(btype, c)]
        else:
            _joint_motion(jtype[i], axis[i], s)
            acc = 0.0
            for k in range(6):
                acc += s[k] * f[i, k]
            tau[dof[i]] = acc
        p = parent[i]
        if p >= 0:
            _mtv6(Xup[i], f[i], tmp)
            for k in range(6):
                f[p, k] += tmp[k]
    return tau


@njit(cache=True)
def _body_dof_motion(model, i, c, out):
    """Motion subspace column ``c`` of body ``i`` and its generalized index."""
    btype = model[M_BTYPE]
    jtype = model[M_JTYPE]
    if jtype[i] == JOINT_BASE:
        for k in range(6):
            out[k] = 0.0
        out[_base_column(btype, c)] = 1.0
        return c
    _joint_motion(jtype[i], model[M_AXIS][i], out)
    return model[M_DOF][i]


@njit(cache=True)
def _body_ndof(model, i):
    if model[M_JTYPE][i] == JOINT_BASE:
        return base_dofs(model[M_BTYPE])
    return 1


@njit(cache=True)
def crba(model, Xup, nv):
    """Composite-rigid-body mass matrix."""
    parent = model[M_PARENT]
    inertia = model[M_INERTIA]
    nb = parent.shape[0]
    Ic = inertia.copy()
    T = np.empty((6, 6))
    for i in range(nb - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            X = Xup[i]
            for r in range(6):
                for c in range(6):
                    acc = 0.0
                    for k in range(6):
                        acc += Ic[i, r, k] * X[k, c]
                    T[r, c] = acc
            for r in range(6):
                for c in range(6):
                    acc = 0.0
                    for k in range(6):
                        acc += X[k, r] * T[k, c]
                    Ic[p, r, c] += acc
    M = np.zeros((nv, nv))
    s = np.empty(6)
    s2 = np.empty(6)
    F = np.empty(6)
    tmp = np.empty(6)
    for i in range(nb):
        for c in range(_body_ndof(model, i)):
            k = _body_dof_motion(model, i, c, s)
            _mv6(Ic[i], s, F)
            for c2 in range(_body_ndof(model, i)):
                k2 = _body_dof_motion(model, i, c2, s2)
                acc = 0.0
                for r in range(6):
                    acc += s2[r] * F[r]
                M[k, k2] = acc
            j = i
            while parent[j] >= 0:
                _mtv6(Xup[j], F, tmp)
                F[:] = tmp
                j = parent[j]
                for c2 in range(_body_ndof(model, j)):
                    k2 = _body_dof_motion(model, j, c2, s2)
                    acc = 0.0
                    for r in range(6):
                        acc += s2[r] * F[r]
                    M[k, k2] = acc
                    M[k2, k] = acc
    return M


@njit(cache=True)
def foot_positions_jacobians(model, Rw, pw, nv):
    """World foot positions and 3 x nv linear-velocity Jacobians."""
    parent = model[M_PARENT]
    foot_body = model[M_FOOT_BODY]
    foot_offset = model[M_FOOT_OFFSET]
    nf = foot_body.shape[0]
    pos = np.zeros((nf, 3))
    J = np.zeros((nf, 3, nv))
    s = np.empty(6)
    rj = np.empty(3)
    w_x_r = np.empty(3)
    lin = np.empty(3)
    for f in range(nf):
        b = foot_body[f]
        for r in range(3):
            pos[f, r] = pw[b, r] + (
                Rw[b, r, 0] * foot_offset[f, 0]
                + Rw[b, r, 1] * foot_offset[f, 1]
                + Rw[b, r, 2] * foot_offset[f, 2]
            )
        j = b
        while j >= 0:
            d = pos[f] - pw[j]
            for r in range(3):
                rj[r] = Rw[j, 0, r] * d[0] + Rw[j, 1, r] * d[1] + Rw[j, 2, r] * d[2]
            for c in range(_body_ndof(model, j)):
                k = _body_dof_motion(model, j, c, s)
                _cross(s[0:3], rj, w_x_r)
                for r in range(3):
                    lin[r] = s[3 + r] + w_x_r[r]
                for r in range(3):
                    J[f, r, k] = Rw[j, r, 0] * lin[0] + Rw[j, r, 1] * lin[1] + Rw[j, r, 2] * lin[2]
            j = parent[j]
    return pos, J


@njit(cache=True)
def cholesky(M):
    n = M.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        acc = M[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if not acc > 0.0:
            return L, False
        L[j, j] = math.sqrt(acc)
        for i in range(j + 1, n):
            acc = M[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return L, True


@njit(cache=True)
def cho_solve(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x


# ---------------------------------------------------------------------------
# base kinematic row: pose rates from body twist


@njit(cache=True)
def pose_rates(btype, q, nu, out):
    """Fill ``out[:nv]`` with the time derivative of the position coordinates."""
    nbase = base_dofs(btype)
    nv = nu.shape[0]
    if btype == BASE_SPATIAL:
        r, p = q[0], q[1]
        sr, cr = math.sin(r), math.cos(r)
        sp, cp = math.sin(p), math.cos(p)
        wx, wy, wz = nu[0], nu[1], nu[2]
        a = sr * wy + cr * wz
        out[0] = wx + (sp / cp) * a
        out[1] = cr * wy - sr * wz
        out[2] = a / cp
        R = rpy_matrix(q[0], q[1], q[2])
        for i in range(3):
            out[3 + i] = R[i, 0] * nu[3] + R[i, 1] * nu[4] + R[i, 2] * nu[5]
    elif btype == BASE_PLANAR:
        c, s = math.cos(q[0]), math.sin(q[0])
        out[0] = nu[0]
        out[1] = c * nu[1] + s * nu[2]
        out[2] = -s * nu[1] + c * nu[2]
    for i in range(nbase, nv):
        out[i] = nu[i]


@njit(cache=True)
def pose_rate_jacobian(btype, q, nu, A):
    """Analytic derivatives of the kinematic row.

    Fills the top ``nv`` rows of the continuous state Jacobian ``A``: the
    derivative with respect to the base angles (through R_WL) and with
    respect to the velocities (the R_WL map itself).
    """
    nv = nu.shape[0]
    nbase = base_dofs(btype)
    for i in range(nv):
        for j in range(2 * nv):
            A[i, j] = 0.0
    if btype == BASE_SPATIAL:
        r, p, y = q[0], q[1], q[2]
        sr, cr = math.sin(r), math.cos(r)
        sp, cp = math.sin(p), math.cos(p)
        tp = sp / cp
        wx, wy, wz = nu[0], nu[1], nu[2]
        a = sr * wy + cr * wz
        b = cr * wy - sr * wz
        # angle rates w.r.t. angles
        A[0, 0] = tp * b
        A[0, 1] = a / (cp * cp)
        A[1, 0] = -a
        A[2, 0] = b / cp
        A[2, 1] = a * sp / (cp * cp)
        # angle rates w.r.t. body angular velocity
        A[0, nv + 0] = 1.0
        A[0, nv + 1] = tp * sr
        A[0, nv + 2] = tp * cr
        A[1, nv + 1] = cr
        A[1, nv + 2] = -sr
        A[2, nv + 1] = sr / cp
        A[2, nv + 2] = cr / cp
        Rx, Ry, Rz = _rot_x(r), _rot_y(p), _rot_z(y)
        dR0 = Rz @ Ry @ _d_rot_x(r)
        dR1 = Rz @ _d_rot_y(p) @ Rx
        dR2 = _d_rot_z(y) @ Ry @ Rx
        R = Rz @ Ry @ Rx
        v = nu[3:6]
        for i in range(3):
            A[3 + i, 0] = dR0[i, 0] * v[0] + dR0[i, 1] * v[1] + dR0[i, 2] * v[2]
            A[3 + i, 1] = dR1[i, 0] * v[0] + dR1[i, 1] * v[1] + dR1[i, 2] * v[2]
            A[3 + i, 2] = dR2[i, 0] * v[0] + dR2[i, 1] * v[1] + dR2[i, 2] * v[2]
            for j in range(3):
                A[3 + i, nv + 3 + j] = R[i, j]
    elif btype == BASE_PLANAR:
        c, s = math.cos(q[0]), math.sin(q[0])
        A[0, nv + 0] = 1.0
        A[1, 0] = -s * nu[1] + c * nu[2]
        A[2, 0] = -c * nu[1] - s * nu[2]
        A[1, nv + 1] = c
        A[1, nv + 2] = s
        A[2, nv + 1] = -s
        A[2, nv + 2] = c
    for i in range(nbase, nv):
        A[i, nv + i] = 1.0


# ---------------------------------------------------------------------------
# contact model


@njit(cache=True)
def smoothing_scale(pn, alpha_c):
    """Penetration shaping shared by the normal and tangential models."""
    if pn <= 0.0:
        return 0.0
    if pn < alpha_c:
        return pn * pn / (2.0 * alpha_c)
    return pn - 0.5 * alpha_c


@njit(cache=True)
def normal_force_magnitude(pn, pn_dot, alpha_c, k_n, d_n):
    s = smoothing_scale(pn, alpha_c)
    if s == 0.0:
        return 0.0
    fn = (k_n + d_n * pn_dot) * s
    # no adhesion
    if fn < 0.0:
        return 0.0
    return fn


@njit(cache=True)
def foot_contact_force(pos, vel, in_contact, anchor, plane_point, normal, params, out):
    """Contact force on one foot (world frame), written into ``out``.

    ``params`` is ``(alpha_c, k_n, d_n, k_t, d_t, mu)``.
    """
    alpha_c, k_n, d_n, k_t, d_t, mu = (
        params[0], params[1], params[2], params[3], params[4], params[5],
    )
    depth = 0.0
    for r in range(3):
        depth -= normal[r] * (pos[r] - plane_point[r])
    pn = depth
    if pn <= 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    pn_dot = -(normal[0] * vel[0] + normal[1] * vel[1] + normal[2] * vel[2])
    s = smoothing_scale(pn, alpha_c)
    fn = normal_force_magnitude(pn, pn_dot, alpha_c, k_n, d_n)
    # anchor: established contact point, or the current projection when the
    # contact has not been registered yet
    d = np.empty(3)
    if in_contact:
        for r in range(3):
            d[r] = pos[r] - anchor[r]
    else:
        for r in range(3):
            d[r] = -depth * normal[r]
    dn = normal[0] * d[0] + normal[1] * d[1] + normal[2] * d[2]
    vn = normal[0] * vel[0] + normal[1] * vel[1] + normal[2] * vel[2]
    ft = np.empty(3)
    mag2 = 0.0
    for r in range(3):
        pt = d[r] - dn * normal[r]
        vt = vel[r] - vn * normal[r]
        ft[r] = -(k_t * pt + d_t * vt) * s
        mag2 += ft[r] * ft[r]
    limit = mu * fn
    mag = math.sqrt(mag2)
    if mag > limit:
        scale = limit / mag if mag > 0.0 else 0.0
        for r in range(3):
            ft[r] *= scale
    for r in range(3):
        out[r] = fn * normal[r] + ft[r]


@njit(cache=True)
def contact_forces(pos, vel, hidden, plane_point, normal, params):
    nf = pos.shape[0]
    lam = np.zeros((nf, 3))
    for f in range(nf):
        foot_contact_force(
            pos[f], vel[f], hidden[f, 0] > 0.5, hidden[f, 1:4], plane_point, normal,
            params, lam[f],
        )
    return lam


@njit(cache=True)
def update_hidden(pos, hidden, plane_point, normal):
    """Register new contacts at the projected foot position, clear lifted feet."""
    nf = pos.shape[0]
    out = hidden.copy()
    for f in range(nf):
        depth = 0.0
        for r in range(3):
            depth -= normal[r] * (pos[f, r] - plane_point[r])
        if depth <= 0.0:
            out[f, 0] = 0.0
            out[f, 1] = 0.0
            out[f, 2] = 0.0
            out[f, 3] = 0.0
        elif out[f, 0] < 0.5:
            out[f, 0] = 1.0
            for r in range(3):
                out[f, 1 + r] = pos[f, r] + depth * normal[r]
    return out


@njit(cache=True)
def update_hidden_crossing(prev_pos, pos, hidden, plane_point, normal):
    """Like ``update_hidden`` but anchors a new contact where the foot crossed the plane.

    The crossing point is interpolated linearly between the previous and the
    current foot position, so the anchor moves continuously with the state
    even when a perturbation shifts touchdown across a step boundary.
    """
    nf = pos.shape[0]
    out = update_hidden(pos, hidden, plane_point, normal)
    for f in range(nf):
        if out[f, 0] > 0.5 and hidden[f, 0] < 0.5:
            h_prev = 0.0
            h_now = 0.0
            for r in range(3):
                h_prev += normal[r] * (prev_pos[f, r] - plane_point[r])
                h_now += normal[r] * (pos[f, r] - plane_point[r])
            if h_prev > 0.0:
                tau = h_prev / (h_prev - h_now)
                h_c = 0.0
                c = np.empty(3)
                for r in range(3):
                    c[r] = prev_pos[f, r] + tau * (pos[f, r] - prev_pos[f, r])
                    h_c += normal[r] * (c[r] - plane_point[r])
                for r in range(3):
                    out[f, 1 + r] = c[r] - h_c * normal[r]
    return out


# ---------------------------------------------------------------------------
# continuous dynamics


@njit(cache=True)
def _generalized_input(model, u, nv):
    act = model[M_ACT_DOF]
    tau = np.zeros(nv)
    for i in range(act.shape[0]):
        tau[act[i]] += u[i]
    return tau


@njit(cache=True)
def _feet_velocity(J, nu):
    nf = J.shape[0]
    nv = nu.shape[0]
    vel = np.zeros((nf, 3))
    for f in range(nf):
        for r in range(3):
            acc = 0.0
            for k in range(nv):
                acc += J[f, r, k] * nu[k]
            vel[f, r] = acc
    return vel


@njit(cache=True)
def _add_contact_torques(J, lam, rhs):
    nf = J.shape[0]
    nv = rhs.shape[0]
    for f in range(nf):
        for k in range(nv):
            rhs[k] += J[f, 0, k] * lam[f, 0] + J[f, 1, k] * lam[f, 1] + J[f, 2, k] * lam[f, 2]


@njit(cache=True)
def accelerations(model, x, u, hidden, plane_point, normal, params):
    """Generalized accelerations and the per-foot contact forces."""
    nv = x.shape[0] // 2
    q = x[:nv]
    nu = x[nv:]
    Xup, Rw, pw = kinematics(model, q)
    empty = np.zeros((0, 6))
    bias = rnea(model, Xup, nu, np.zeros(nv), True, empty)
    M = crba(model, Xup, nv)
    pos, J = foot_positions_jacobians(model, Rw, pw, nv)
    nf = pos.shape[0]
    rhs = _generalized_input(model, u, nv) - bias
    lam = np.zeros((nf, 3))
    if nf > 0:
        vel = _feet_velocity(J, nu)
        lam = contact_forces(pos, vel, hidden, plane_point, normal, params)
        _add_contact_torques(J, lam, rhs)
    L, ok = cholesky(M)
    if not ok:
        return np.full(nv, np.nan), lam
    return cho_solve(L, rhs), lam


@njit(cache=True)
def derivative(model, x, u, hidden, plane_point, normal, params):
    nv = x.shape[0] // 2
    xdot = np.empty(2 * nv)
    pose_rates(model[M_BTYPE], x[:nv], x[nv:], xdot)
    acc, _ = accelerations(model, x, u, hidden, plane_point, normal, params)
    xdot[nv:] = acc
    return xdot


@njit(cache=True)
def integrate(model, x, u, hidden, plane_point, normal, params, dt, method):
    if method == INTEGRATOR_EULER:
        return x + dt * derivative(model, x, u, hidden, plane_point, normal, params)
    k1 = derivative(model, x, u, hidden, plane_point, normal, params)
    k2 = derivative(model, x + 0.5 * dt * k1, u, hidden, plane_point, normal, params)
    k3 = derivative(model, x + 0.5 * dt * k2, u, hidden, plane_point, normal, params)
    k4 = derivative(model, x + dt * k3, u, hidden, plane_point, normal, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _all_finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def feet_world(model, q):
    nv = q.shape[0]
    _, Rw, pw = kinematics(model, q)
    pos, _ = foot_positions_jacobians(model, Rw, pw, nv)
    return pos


@njit(cache=True)
def step(model, x, u, hidden, plane_point, normal, params, dt, method):
    """One integration step; returns (x_next, hidden_next, status)."""
    nv = x.shape[0] // 2
    btype = model[M_BTYPE]
    if not gimbal_ok(btype, x):
        return x.copy(), hidden.copy(), STATUS_GIMBAL
    x_next = integrate(model, x, u, hidden, plane_point, normal, params, dt, method)
    if not _all_finite(x_next):
        return x_next, hidden.copy(), STATUS_NONFINITE
    if not gimbal_ok(btype, x_next):
        return x_next, hidden.copy(), STATUS_GIMBAL
    prev = feet_world(model, x[:nv])
    pos = feet_world(model, x_next[:nv])
    return x_next, update_hidden_crossing(prev, pos, hidden, plane_point, normal), STATUS_OK


@njit(cache=True)
def rollout(model, x0, hidden0, u_nom, ff_step, K, x_nom, K_anchor, h_nom, T, alpha, plane_point,
            normal, params, dt, method):
    """Closed-loop rollout of u = u_nom + alpha*ff_step + K (x - x_nom) + K_anchor da.

    ``da`` holds the tangential anchor deviations (coordinates in the basis
    ``T``) of feet that are in contact both here and in the nominal hidden
    state ``h_nom``; ``K_anchor`` may have zero columns.
    Returns (states, inputs, hidden, status, failing_index).
    """
    N = u_nom.shape[0]
    n = x0.shape[0]
    m = u_nom.shape[1]
    nf = hidden0.shape[0]
    xs = np.zeros((N + 1, n))
    us = np.zeros((N, m))
    hs = np.zeros((N + 1, nf, 4))
    xs[0] = x0
    hs[0] = hidden0
    for k in range(N):
        u = u_nom[k] + alpha * ff_step[k] + K[k] @ (xs[k] - x_nom[k])
        na = K_anchor.shape[2]
        if na > 0:
            nt = T.shape[1]
            da = np.zeros(na)
            for f in range(nf):
                if hs[k, f, 0] > 0.5 and h_nom[k, f, 0] > 0.5:
                    for j in range(nt):
                        acc = 0.0
                        for r in range(3):
                            acc += T[r, j] * (hs[k, f, 1 + r] - h_nom[k, f, 1 + r])
                        da[f * nt + j] = acc
            u = u + K_anchor[k] @ da
        us[k] = u
        xn, hn, status = step(model, xs[k], u, hs[k], plane_point, normal, params, dt, method)
        if status != STATUS_OK:
            return xs, us, hs, status, k
        xs[k + 1] = xn
        hs[k + 1] = hn
    return xs, us, hs, STATUS_OK, -1


# ---------------------------------------------------------------------------
# linearization


@njit(cache=True)
def _fd_step(xi):
    return max(1e-6, 1e-6 * abs(xi))


@njit(cache=True)
def continuous_jacobians(model, x, u, hidden, plane_point, normal, params):
    """Hybrid continuous-time Jacobians (A, B) and the state derivative.

    Kinematic row and all input columns are analytic; the acceleration row is
    differentiated with central differences, hidden anchors frozen.
    """
    nv = x.shape[0] // 2
    n = 2 * nv
    btype = model[M_BTYPE]
    act = model[M_ACT_DOF]
    m = act.shape[0]
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    q = x[:nv].copy()
    nu = x[nv:].copy()
    pose_rate_jacobian(btype, q, nu, A)
    xdot = np.empty(n)
    pose_rates(btype, q, nu, xdot)

    empty = np.zeros((0, 6))
    tau_in = _generalized_input(model, u, nv)
    nf = model[M_FOOT_BODY].shape[0]

    # nominal factorization, reused for velocity perturbations
    Xup, Rw, pw = kinematics(model, q)
    M = crba(model, Xup, nv)
    L, ok = cholesky(M)
    if not ok:
        A[:, :] = np.nan
        return A, B, xdot
    pos, J = foot_positions_jacobians(model, Rw, pw, nv)

    def _acc_velocity(nu_p):
        rhs = tau_in - rnea(model, Xup, nu_p, np.zeros(nv), True, empty)
        if nf > 0:
            vel = _feet_velocity(J, nu_p)
            lam = contact_forces(pos, vel, hidden, plane_point, normal, params)
            _add_contact_torques(J, lam, rhs)
        return cho_solve(L, rhs)

    acc0 = _acc_velocity(nu)
    xdot[nv:] = acc0

    # positions: full re-evaluation
    xp = x.copy()
    for j in range(nv):
        h = _fd_step(x[j])
        xp[j] = x[j] + h
        a_plus, _ = accelerations(model, xp, u, hidden, plane_point, normal, params)
        xp[j] = x[j] - h
        a_minus, _ = accelerations(model, xp, u, hidden, plane_point, normal, params)
        xp[j] = x[j]
        for i in range(nv):
            A[nv + i, j] = (a_plus[i] - a_minus[i]) / (2.0 * h)
    # velocities: mass matrix and foot Jacobians unchanged
    nup = nu.copy()
    for j in range(nv):
        h = _fd_step(nu[j])
        nup[j] = nu[j] + h
        a_plus = _acc_velocity(nup)
        nup[j] = nu[j] - h
        a_minus = _acc_velocity(nup)
        nup[j] = nu[j]
        for i in range(nv):
            A[nv + i, nv + j] = (a_plus[i] - a_minus[i]) / (2.0 * h)
    # inputs: M^-1 S^T
    e = np.zeros(nv)
    for c in range(m):
        e[:] = 0.0
        e[act[c]] = 1.0
        col = cho_solve(L, e)
        for i in range(nv):
            B[nv + i, c] = col[i]
    return A, B, xdot


@njit(cache=True)
def discrete_jacobians(model, x, u, hidden, plane_point, normal, params, dt, method):
    """Jacobians of one integration step, consistent with ``integrate``."""
    n = x.shape[0]
    I = np.eye(n)
    A1, B1, k1 = continuous_jacobians(model, x, u, hidden, plane_point, normal, params)
    if method == INTEGRATOR_EULER:
        return I + dt * A1, dt * B1
    A2, B2, k2 = continuous_jacobians(model, x + 0.5 * dt * k1, u, hidden, plane_point,
                                      normal, params)
    A3, B3, k3 = continuous_jacobians(model, x + 0.5 * dt * k2, u, hidden, plane_point,
                                      normal, params)
    A4, B4, _ = continuous_jacobians(model, x + dt * k3, u, hidden, plane_point,
                                     normal, params)
    dk1x = A1
    dk1u = B1
    dk2x = A2 @ (I + 0.5 * dt * dk1x)
    dk2u = A2 @ (0.5 * dt * dk1u) + B2
    dk3x = A3 @ (I + 0.5 * dt * dk2x)
    dk3u = A3 @ (0.5 * dt * dk2u) + B3
    dk4x = A4 @ (I + dt * dk3x)
    dk4u = A4 @ (dt * dk3u) + B4
    Ad = I + (dt / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Bd = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return Ad, Bd


@njit(cache=True)
def linearize_trajectory(model, xs, us, hs, plane_point, normal, params, dt, method):
    N = us.shape[0]
    n = xs.shape[1]
    m = us.shape[1]
    As = np.empty((N, n, n))
    Bs = np.empty((N, n, m))
    for k in range(N):
        Ad, Bd = discrete_jacobians(model, xs[k], us[k], hs[k], plane_point, normal,
                                    params, dt, method)
        As[k] = Ad
        Bs[k] = Bd
    return As, Bs


@njit(cache=True)
def trajectory_contact_forces(model, xs, hs, plane_point, normal, params):
    """Per-step contact forces along a recorded trajectory."""
    T = xs.shape[0]
    nv = xs.shape[1] // 2
    nf = hs.shape[1]
    out = np.zeros((T, nf, 3))
    for k in range(T):
        q = xs[k, :nv]
        nu = xs[k, nv:]
        _, Rw, pw = kinematics(model, q)
        pos, J = foot_positions_jacobians(model, Rw, pw, nv)
        vel = _feet_velocity(J, nu)
        out[k] = contact_forces(pos, vel, hs[k], plane_point, normal, params)
    return out


# ---------------------------------------------------------------------------
# anchor sensitivities


@njit(cache=True)
def anchor_step_jacobian(model, x, u, hidden, plane_point, normal, params, dt, method, T):
    """Derivative of one step with respect to the tangential anchor coordinates.

    Columns ``f*nt + j`` hold d x_next / d (T[:, j] . anchor_f) for feet in
    contact; central differences with a 1 micrometre step.
    """
    n = x.shape[0]
    nf = hidden.shape[0]
    nt = T.shape[1]
    E = np.zeros((n, nf * nt))
    h = 1e-6
    for f in range(nf):
        if hidden[f, 0] < 0.5:
            continue
        for j in range(nt):
            hp = hidden.copy()
            hm = hidden.copy()
            for r in range(3):
                hp[f, 1 + r] += h * T[r, j]
                hm[f, 1 + r] -= h * T[r, j]
            xp = integrate(model, x, u, hp, plane_point, normal, params, dt, method)
            xm = integrate(model, x, u, hm, plane_point, normal, params, dt, method)
            E[:, f * nt + j] = (xp - xm) / (2.0 * h)
    return E


@njit(cache=True)
def feet_position_derivative(model, q):
    """d foot_position / d q by central differences, shape (n_feet, 3, nv)."""
    nv = q.shape[0]
    base = feet_world(model, q)
    nf = base.shape[0]
    D = np.zeros((nf, 3, nv))
    for j in range(nv):
        h = max(1e-7, 1e-7 * abs(q[j]))
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        D[:, :, j] = (feet_world(model, qp) - feet_world(model, qm)) / (2.0 * h)
    return D


@njit(cache=True)
def augmented_linearization(model, xs, us, hs, plane_point, normal, params, dt, method, T):
    """Step Jacobians of the state augmented with tangential anchor coordinates.

    The augmented deviation is ``[dx, da]`` with ``da`` of size
    ``n_feet * nt``.  Anchors of feet staying in contact are constant; a
    touchdown sets the anchor to the interpolated plane crossing, whose
    derivative with respect to the states on both sides of the step is
    chained through the step Jacobians.  Anchors of feet out of contact
    have zero rows.
    """
    N = us.shape[0]
    n = xs.shape[1]
    nv = n // 2
    m = us.shape[1]
    nf = hs.shape[1]
    nt = T.shape[1]
    na = nf * nt
    nz = n + na
    Az = np.zeros((N, nz, nz))
    Bz = np.zeros((N, nz, m))
    I3 = np.eye(3)
    for k in range(N):
        Ad, Bd = discrete_jacobians(model, xs[k], us[k], hs[k], plane_point, normal, params, dt, method)
        E = anchor_step_jacobian(model, xs[k], us[k], hs[k], plane_point, normal, params, dt, method, T)
        Az[k, :n, :n] = Ad
        Az[k, :n, n:] = E
        Bz[k, :n, :] = Bd
        touchdown = False
        for f in range(nf):
            if hs[k + 1, f, 0] > 0.5:
                if hs[k, f, 0] > 0.5:
                    for j in range(nt):
                        Az[k, n + f * nt + j, n + f * nt + j] = 1.0
                else:
                    touchdown = True
        if not touchdown:
            continue
        q0 = xs[k, :nv].copy()
        q1 = xs[k + 1, :nv].copy()
        D0 = feet_position_derivative(model, q0)
        D1 = feet_position_derivative(model, q1)
        P0 = feet_world(model, q0)
        P1 = feet_world(model, q1)
        for f in range(nf):
            if not (hs[k + 1, f, 0] > 0.5 and hs[k, f, 0] < 0.5):
                continue
            h_prev = 0.0
            h_now = 0.0
            for r in range(3):
                h_prev += normal[r] * (P0[f, r] - plane_point[r])
                h_now += normal[r] * (P1[f, r] - plane_point[r])
            if h_prev > 0.0:
                tau = h_prev / (h_prev - h_now)
                den = (h_prev - h_now) ** 2
                d = P1[f] - P0[f]
                C0 = (1.0 - tau) * I3 - np.outer(d, normal) * (h_now / den)
                C1 = tau * I3 + np.outer(d, normal) * (h_prev / den)
            else:
                C0 = np.zeros((3, 3))
                C1 = I3.copy()
            G0 = T.T @ (C0 @ D0[f])
            G1 = T.T @ (C1 @ D1[f])
            r0 = n + f * nt
            Az[k, r0:r0 + nt, :nv] += G0
            Az[k, r0:r0 + nt, :] += G1 @ Az[k, :nv, :]
            Bz[k, r0:r0 + nt, :] = G1 @ Bz[k, :nv, :]
    return Az, Bz
