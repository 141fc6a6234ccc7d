"""Inner loops: ray casting, path tracing, adjoint replay and edge sampling.

This file is written in Cython's pure-Python mode.  ``setup.py`` compiles it
into the ``edgetrace._kernels`` extension, which the import system prefers
over this source file.  When no compiled build is present the very same code
runs under the interpreter, which is slow but bit-for-bit identical.

Everything here works on flat arrays packed by :mod:`edgetrace.scene` into a
:class:`SceneData`; gradients land in a :class:`GradBuffers` expressed in
world-space terms (world vertices, camera position/look-at, material and
emission colours).  Mapping those onto user parameters happens in Python.
"""
import cython
from cython.cimports.libc.math import sqrt, fabs, pow, floor, cos, sin

COMPILED = cython.compiled

PI = cython.declare(cython.double, 3.141592653589793)
INV_PI = cython.declare(cython.double, 0.3183098861837907)
RAY_EPS = cython.declare(cython.double, 1e-6)
BIG = cython.declare(cython.double, 1e300)

M64 = cython.declare(cython.ulonglong, 0xFFFFFFFFFFFFFFFF)
M32 = cython.declare(cython.ulonglong, 0xFFFFFFFF)
GOLDEN = cython.declare(cython.ulonglong, 0x9E3779B97F4A7C15)
MIX1 = cython.declare(cython.ulonglong, 0xBF58476D1CE4E5B9)
MIX2 = cython.declare(cython.ulonglong, 0x94D049BB133111EB)
SALT = cython.declare(cython.ulonglong, 0x632BE59BD9B4E019)
PK1 = cython.declare(cython.ulonglong, 0xE170893D)
PK2 = cython.declare(cython.ulonglong, 0x0929EB3F)
PK3 = cython.declare(cython.ulonglong, 0x6935FA69)
PK4 = cython.declare(cython.ulonglong, 0x74DCB303)
PK5 = cython.declare(cython.ulonglong, 0x9E501CC3)
PK6 = cython.declare(cython.ulonglong, 0xC860A3DF)
ONE = cython.declare(cython.ulonglong, 1)

TAG_PIXEL = cython.declare(cython.ulonglong, 1)
TAG_PEDGE = cython.declare(cython.ulonglong, 2)
TAG_CONT = cython.declare(cython.ulonglong, 7)
TAG_SEDGE = cython.declare(cython.ulonglong, 1000)

# checkpoint row layout (doubles)
CK_P = cython.declare(cython.int, 0)
CK_N = cython.declare(cython.int, 3)
CK_DIN = cython.declare(cython.int, 6)
CK_BETA = cython.declare(cython.int, 9)
CK_Q = cython.declare(cython.int, 12)
CK_LB = cython.declare(cython.int, 15)
CK_DOUT = cython.declare(cython.int, 18)
CK_NXL = cython.declare(cython.int, 21)
CK_G = cython.declare(cython.int, 22)
CK_T = cython.declare(cython.int, 25)
CK_LP = cython.declare(cython.int, 28)
CK_SGN = cython.declare(cython.int, 29)
CK_HT = cython.declare(cython.int, 30)
NCK = 31
# checkpoint row layout (ints)
CI_FACE = cython.declare(cython.int, 0)
CI_LFACE = cython.declare(cython.int, 1)
CI_VALID = cython.declare(cython.int, 2)
CI_NV = cython.declare(cython.int, 3)
CI_CONT = cython.declare(cython.int, 4)
NCI = 5

Vec3 = cython.struct(x=cython.double, y=cython.double, z=cython.double)
Hit = cython.struct(t=cython.double, face=cython.int, b1=cython.double, b2=cython.double)
Pair = cython.struct(ax=cython.double, ay=cython.double, az=cython.double,
                     bx=cython.double, by=cython.double, bz=cython.double)

if not cython.compiled:
    class Vec3:  # noqa: F811
        __slots__ = ("x", "y", "z")

        def __init__(self, x=0.0, y=0.0, z=0.0):
            self.x = x
            self.y = y
            self.z = z

    class Hit:  # noqa: F811
        __slots__ = ("t", "face", "b1", "b2")

        def __init__(self, t=0.0, face=-1, b1=0.0, b2=0.0):
            self.t = t
            self.face = face
            self.b1 = b1
            self.b2 = b2

    class Pair:  # noqa: F811
        __slots__ = ("ax", "ay", "az", "bx", "by", "bz")

        def __init__(self, ax=0.0, ay=0.0, az=0.0, bx=0.0, by=0.0, bz=0.0):
            self.ax = ax
            self.ay = ay
            self.az = az
            self.bx = bx
            self.by = by
            self.bz = bz


@cython.cclass
class SceneData:
    """Packed, read-only scene arrays shared by every kernel."""

    V: cython.double[:, ::1]
    F: cython.int[:, ::1]
    FN: cython.double[:, ::1]
    FA: cython.double[::1]
    fmat: cython.int[::1]
    fmesh: cython.int[::1]
    kd: cython.double[:, ::1]
    ks: cython.double[:, ::1]
    shin: cython.double[::1]
    Le: cython.double[:, ::1]
    memit: cython.int[::1]
    light_face: cython.int[::1]
    light_cdf: cython.double[::1]
    light_area: cython.double
    nlight: cython.int
    bmin: cython.double[:, ::1]
    bmax: cython.double[:, ::1]
    bnode: cython.int[:, ::1]
    border: cython.int[::1]
    E: cython.int[:, ::1]
    ecrease: cython.int[::1]
    cam: cython.double[::1]
    camJ: cython.double[:, :, ::1]
    W: cython.int
    H: cython.int
    nv: cython.int
    nf: cython.int
    ne: cython.int
    ck0: cython.double[:, ::1]
    ci0: cython.int[:, ::1]

    def __init__(self, V, F, FN, FA, fmat, fmesh, kd, ks, shin, Le, memit,
                 light_face, light_cdf, light_area, bmin, bmax, bnode, border,
                 E, ecrease, cam, camJ, W, H, ck0, ci0):
        self.V = V
        self.F = F
        self.FN = FN
        self.FA = FA
        self.fmat = fmat
        self.fmesh = fmesh
        self.kd = kd
        self.ks = ks
        self.shin = shin
        self.Le = Le
        self.memit = memit
        self.light_face = light_face
        self.light_cdf = light_cdf
        self.light_area = light_area
        self.nlight = light_face.shape[0]
        self.bmin = bmin
        self.bmax = bmax
        self.bnode = bnode
        self.border = border
        self.E = E
        self.ecrease = ecrease
        self.cam = cam
        self.camJ = camJ
        self.W = W
        self.H = H
        self.nv = V.shape[0]
        self.nf = F.shape[0]
        self.ne = E.shape[0]
        self.ck0 = ck0
        self.ci0 = ci0


@cython.cclass
class GradBuffers:
    """World-space gradient accumulators.

    With ``project`` set, every accumulation is instead contracted with the
    tangent arrays into the scalar ``proj``; this is how per-pixel derivative
    images for a single parameter are produced.
    """

    dV: cython.double[:, ::1]
    dcam: cython.double[::1]
    dkd: cython.double[:, ::1]
    dks: cython.double[:, ::1]
    dLe: cython.double[:, ::1]
    tV: cython.double[:, ::1]
    tcam: cython.double[::1]
    tkd: cython.double[:, ::1]
    tks: cython.double[:, ::1]
    tLe: cython.double[:, ::1]
    project: cython.int
    proj: cython.double
    rejected: cython.long

    def __init__(self, dV, dcam, dkd, dks, dLe, tV=None, tcam=None, tkd=None, tks=None, tLe=None):
        self.dV = dV
        self.dcam = dcam
        self.dkd = dkd
        self.dks = dks
        self.dLe = dLe
        self.project = 0
        self.proj = 0.0
        self.rejected = 0
        if tV is not None:
            self.tV = tV
            self.tcam = tcam
            self.tkd = tkd
            self.tks = tks
            self.tLe = tLe
            self.project = 1

    @property
    def rejected_samples(self):
        return self.rejected

    @property
    def projected(self):
        return self.proj

    def reset_projection(self):
        self.proj = 0.0


# ---------------------------------------------------------------------------
# small vector helpers

@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def v3(x: cython.double, y: cython.double, z: cython.double) -> Vec3:
    r: Vec3 = Vec3(x=x, y=y, z=z)
    return r


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vadd(a: Vec3, b: Vec3) -> Vec3:
    return v3(a.x + b.x, a.y + b.y, a.z + b.z)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vsub(a: Vec3, b: Vec3) -> Vec3:
    return v3(a.x - b.x, a.y - b.y, a.z - b.z)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vmul(a: Vec3, s: cython.double) -> Vec3:
    return v3(a.x * s, a.y * s, a.z * s)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vhad(a: Vec3, b: Vec3) -> Vec3:
    return v3(a.x * b.x, a.y * b.y, a.z * b.z)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vmad(a: Vec3, b: Vec3, s: cython.double) -> Vec3:
    return v3(a.x + b.x * s, a.y + b.y * s, a.z + b.z * s)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def dot(a: Vec3, b: Vec3) -> cython.double:
    return a.x * b.x + a.y * b.y + a.z * b.z


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def cross(a: Vec3, b: Vec3) -> Vec3:
    return v3(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vlen(a: Vec3) -> cython.double:
    return sqrt(a.x * a.x + a.y * a.y + a.z * a.z)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def normalize(a: Vec3) -> Vec3:
    return vmul(a, 1.0 / vlen(a))


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def normalize_vjp(y: Vec3, length: cython.double, g: Vec3) -> Vec3:
    # y = x / |x|; returns dL/dx given dL/dy
    return vmul(vsub(g, vmul(y, dot(y, g))), 1.0 / length)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def csum(a: Vec3) -> cython.double:
    return a.x + a.y + a.z


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vrow(m: cython.double[:, ::1], i: cython.Py_ssize_t) -> Vec3:
    return v3(m[i, 0], m[i, 1], m[i, 2])


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def vat(m: cython.double[::1], i: cython.Py_ssize_t) -> Vec3:
    return v3(m[i], m[i + 1], m[i + 2])


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def ckv(ck: cython.double[:, ::1], j: cython.Py_ssize_t, c: cython.Py_ssize_t) -> Vec3:
    return v3(ck[j, c], ck[j, c + 1], ck[j, c + 2])


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def ckset(ck: cython.double[:, ::1], j: cython.Py_ssize_t, c: cython.Py_ssize_t, a: Vec3) -> cython.void:
    ck[j, c] = a.x
    ck[j, c + 1] = a.y
    ck[j, c + 2] = a.z


# ---------------------------------------------------------------------------
# counter-based random numbers

@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def mix64(z: cython.ulonglong) -> cython.ulonglong:
    z = ((z ^ (z >> 30)) * MIX1) & M64
    z = ((z ^ (z >> 27)) * MIX2) & M64
    return z ^ (z >> 31)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def hk(a: cython.ulonglong, b: cython.ulonglong) -> cython.ulonglong:
    return mix64((mix64(a) + ((b * GOLDEN) & M64) + SALT) & M64)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def rnd(key: cython.ulonglong, dim: cython.int) -> cython.double:
    z: cython.ulonglong = mix64((key + ((cython.cast(cython.ulonglong, dim) + 1) * GOLDEN & M64)) & M64)
    return cython.cast(cython.double, z >> 11) * (1.0 / 9007199254740992.0)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def pixel_key(seed: cython.ulonglong, px: cython.int, py: cython.int, s: cython.int) -> cython.ulonglong:
    k: cython.ulonglong = hk(seed, TAG_PIXEL)
    k = hk(k, cython.cast(cython.ulonglong, px))
    k = hk(k, cython.cast(cython.ulonglong, py))
    return hk(k, cython.cast(cython.ulonglong, s))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def permute32(i: cython.ulonglong, n: cython.ulonglong, p: cython.ulonglong) -> cython.ulonglong:
    # Kensler's hash-based permutation of [0, n), cycle-walking on a 2^k domain
    w: cython.ulonglong = n - 1
    w |= w >> 1
    w |= w >> 2
    w |= w >> 4
    w |= w >> 8
    w |= w >> 16
    p = p & M32
    while True:
        i ^= p
        i = (i * PK1) & M32
        i ^= p >> 16
        i ^= (i & w) >> 4
        i ^= p >> 8
        i = (i * PK2) & M32
        i ^= p >> 23
        i ^= (i & w) >> 1
        i = (i * (ONE | (p >> 27))) & M32
        i = (i * PK3) & M32
        i ^= (i & w) >> 11
        i = (i * PK4) & M32
        i ^= (i & w) >> 2
        i = (i * PK5) & M32
        i ^= (i & w) >> 2
        i = (i * PK6) & M32
        i &= w
        i ^= i >> 5
        if i < n:
            break
    return (i + p) % n


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def path_dim(k: cython.int, slot: cython.int) -> cython.int:
    # dims 0,1 are the pixel jitter; each bounce owns five further dims
    return 2 + 5 * k + slot


# ---------------------------------------------------------------------------
# gradient accumulation

@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def acc_v(gb: GradBuffers, i: cython.Py_ssize_t, g: Vec3) -> cython.void:
    if gb.project:
        gb.proj += g.x * gb.tV[i, 0] + g.y * gb.tV[i, 1] + g.z * gb.tV[i, 2]
    else:
        gb.dV[i, 0] += g.x
        gb.dV[i, 1] += g.y
        gb.dV[i, 2] += g.z


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def acc_cam(gb: GradBuffers, j: cython.Py_ssize_t, g: cython.double) -> cython.void:
    if gb.project:
        gb.proj += g * gb.tcam[j]
    else:
        gb.dcam[j] += g


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def acc_rgb(gb: GradBuffers, which: cython.int, i: cython.Py_ssize_t, g: Vec3) -> cython.void:
    if gb.project:
        if which == 0:
            gb.proj += g.x * gb.tkd[i, 0] + g.y * gb.tkd[i, 1] + g.z * gb.tkd[i, 2]
        elif which == 1:
            gb.proj += g.x * gb.tks[i, 0] + g.y * gb.tks[i, 1] + g.z * gb.tks[i, 2]
        else:
            gb.proj += g.x * gb.tLe[i, 0] + g.y * gb.tLe[i, 1] + g.z * gb.tLe[i, 2]
    elif which == 0:
        gb.dkd[i, 0] += g.x
        gb.dkd[i, 1] += g.y
        gb.dkd[i, 2] += g.z
    elif which == 1:
        gb.dks[i, 0] += g.x
        gb.dks[i, 1] += g.y
        gb.dks[i, 2] += g.z
    else:
        gb.dLe[i, 0] += g.x
        gb.dLe[i, 1] += g.y
        gb.dLe[i, 2] += g.z


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def face_cross_vjp(sd: SceneData, gb: GradBuffers, f: cython.int, gN: Vec3) -> cython.void:
    # N = (V1 - V0) x (V2 - V0)
    i0: cython.int = sd.F[f, 0]
    i1: cython.int = sd.F[f, 1]
    i2: cython.int = sd.F[f, 2]
    a: Vec3 = vrow(sd.V, i0)
    e1: Vec3 = vsub(vrow(sd.V, i1), a)
    e2: Vec3 = vsub(vrow(sd.V, i2), a)
    g1: Vec3 = cross(e2, gN)
    g2: Vec3 = cross(gN, e1)
    acc_v(gb, i1, g1)
    acc_v(gb, i2, g2)
    acc_v(gb, i0, vmul(vadd(g1, g2), -1.0))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def face_normal_vjp(sd: SceneData, gb: GradBuffers, f: cython.int, sgn: cython.double, gn: Vec3) -> cython.void:
    # n = sgn * N / |N|
    i0: cython.int = sd.F[f, 0]
    a: Vec3 = vrow(sd.V, i0)
    N: Vec3 = cross(vsub(vrow(sd.V, sd.F[f, 1]), a), vsub(vrow(sd.V, sd.F[f, 2]), a))
    L: cython.double = vlen(N)
    face_cross_vjp(sd, gb, f, normalize_vjp(vmul(N, 1.0 / L), L, vmul(gn, sgn)))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def rayplane_vjp(sd: SceneData, gb: GradBuffers, f: cython.int, o: Vec3, d: Vec3, gp: Vec3) -> Pair:
    """Adjoint of p = o + t d with t from the plane of face f; returns (g_o, g_d)."""
    i0: cython.int = sd.F[f, 0]
    i1: cython.int = sd.F[f, 1]
    i2: cython.int = sd.F[f, 2]
    V0: Vec3 = vrow(sd.V, i0)
    e1: Vec3 = vsub(vrow(sd.V, i1), V0)
    e2: Vec3 = vsub(vrow(sd.V, i2), V0)
    N: Vec3 = cross(e1, e2)
    den: cython.double = dot(d, N)
    w: Vec3 = vsub(V0, o)
    t: cython.double = dot(w, N) / den
    go: Vec3 = gp
    gd: Vec3 = vmul(gp, t)
    gt: cython.double = dot(gp, d)
    gnum: cython.double = gt / den
    gden: cython.double = -gt * t / den
    go = vmad(go, N, -gnum)
    gN: Vec3 = vadd(vmul(w, gnum), vmul(d, gden))
    gd = vmad(gd, N, gden)
    acc_v(gb, i0, vmul(N, gnum))
    face_cross_vjp(sd, gb, f, gN)
    r: Pair = Pair(ax=go.x, ay=go.y, az=go.z, bx=gd.x, by=gd.y, bz=gd.z)
    return r


# ---------------------------------------------------------------------------
# ray casting

@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def tri_t(sd: SceneData, f: cython.int, o: Vec3, d: Vec3, tmin: cython.double, tmax: cython.double,
          h: Hit) -> Hit:
    V0: Vec3 = vrow(sd.V, sd.F[f, 0])
    e1: Vec3 = vsub(vrow(sd.V, sd.F[f, 1]), V0)
    e2: Vec3 = vsub(vrow(sd.V, sd.F[f, 2]), V0)
    pv: Vec3 = cross(d, e2)
    det: cython.double = dot(e1, pv)
    if det == 0.0:
        return h
    inv: cython.double = 1.0 / det
    tv: Vec3 = vsub(o, V0)
    u: cython.double = dot(tv, pv) * inv
    if u < 0.0 or u > 1.0:
        return h
    qv: Vec3 = cross(tv, e1)
    v: cython.double = dot(d, qv) * inv
    if v < 0.0 or u + v > 1.0:
        return h
    t: cython.double = dot(e2, qv) * inv
    if t <= tmin or t >= tmax:
        return h
    r: Hit = Hit(t=t, face=f, b1=u, b2=v)
    return r


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def slab(sd: SceneData, node: cython.int, o: Vec3, inv: Vec3, tmin: cython.double,
         tmax: cython.double) -> cython.bint:
    t0: cython.double = (sd.bmin[node, 0] - o.x) * inv.x
    t1: cython.double = (sd.bmax[node, 0] - o.x) * inv.x
    lo: cython.double = t0 if t0 < t1 else t1
    hi: cython.double = t1 if t0 < t1 else t0
    t0 = (sd.bmin[node, 1] - o.y) * inv.y
    t1 = (sd.bmax[node, 1] - o.y) * inv.y
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    t0 = (sd.bmin[node, 2] - o.z) * inv.z
    t1 = (sd.bmax[node, 2] - o.z) * inv.z
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    if tmin > lo:
        lo = tmin
    if tmax < hi:
        hi = tmax
    # pad for rounding in the slab arithmetic
    return lo <= hi * (1.0 + 1e-12) + 1e-12


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def safe_inv(a: cython.double) -> cython.double:
    if a == 0.0:
        return BIG
    return 1.0 / a


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def intersect(sd: SceneData, o: Vec3, d: Vec3, tmin: cython.double, tmax: cython.double,
              any_hit: cython.bint) -> Hit:
    best: Hit = Hit(t=tmax, face=-1, b1=0.0, b2=0.0)
    if sd.nf == 0:
        return best
    stack = cython.declare(cython.int[64])
    sp: cython.int = 1
    node: cython.int
    i: cython.int
    start: cython.int
    cnt: cython.int
    stack[0] = 0
    inv: Vec3 = v3(safe_inv(d.x), safe_inv(d.y), safe_inv(d.z))
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not slab(sd, node, o, inv, tmin, best.t):
            continue
        cnt = sd.bnode[node, 3]
        if cnt > 0:
            start = sd.bnode[node, 2]
            for i in range(start, start + cnt):
                best = tri_t(sd, sd.border[i], o, d, tmin, best.t, best)
                if any_hit and best.face >= 0:
                    return best
        else:
            stack[sp] = sd.bnode[node, 0]
            stack[sp + 1] = sd.bnode[node, 1]
            sp += 2
    return best


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def occluded(sd: SceneData, p: Vec3, q: Vec3) -> cython.bint:
    w: Vec3 = vsub(q, p)
    dist: cython.double = vlen(w)
    if dist <= 2.0 * RAY_EPS:
        return False
    h: Hit = intersect(sd, p, vmul(w, 1.0 / dist), RAY_EPS, dist - RAY_EPS, True)
    return h.face >= 0


# ---------------------------------------------------------------------------
# camera

@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def cam_dir_un(sd: SceneData, x: cython.double, y: cython.double) -> Vec3:
    th: cython.double = sd.cam[12]
    sx: cython.double = (2.0 * x / sd.W - 1.0) * th * sd.cam[13]
    sy: cython.double = (1.0 - 2.0 * y / sd.H) * th
    return vadd(vat(sd.cam, 3), vadd(vmul(vat(sd.cam, 6), sx), vmul(vat(sd.cam, 9), sy)))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def cam_dir_vjp(sd: SceneData, gb: GradBuffers, x: cython.double, y: cython.double, gd: Vec3) -> cython.void:
    th: cython.double = sd.cam[12]
    sx: cython.double = (2.0 * x / sd.W - 1.0) * th * sd.cam[13]
    sy: cython.double = (1.0 - 2.0 * y / sd.H) * th
    dun: Vec3 = cam_dir_un(sd, x, y)
    L: cython.double = vlen(dun)
    g: Vec3 = normalize_vjp(vmul(dun, 1.0 / L), L, gd)
    j: cython.int
    i: cython.int
    acc: cython.double
    gi: cython.double
    for j in range(6):
        acc = 0.0
        for i in range(3):
            gi = g.x if i == 0 else (g.y if i == 1 else g.z)
            acc += gi * (sd.camJ[0, i, j] + sx * sd.camJ[1, i, j] + sy * sd.camJ[2, i, j])
        acc_cam(gb, j, acc)


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def projection_vjp(sd: SceneData, gb: GradBuffers, vi: cython.int, gx: cython.double,
                   gy: cython.double) -> cython.void:
    """Accumulate gx * d(screen x)/d(.) + gy * d(screen y)/d(.) for world vertex vi."""
    o: Vec3 = vat(sd.cam, 0)
    f: Vec3 = vat(sd.cam, 3)
    r: Vec3 = vat(sd.cam, 6)
    u: Vec3 = vat(sd.cam, 9)
    th: cython.double = sd.cam[12]
    kx: cython.double = sd.W / (2.0 * th * sd.cam[13])
    ky: cython.double = -sd.H / (2.0 * th)
    c: Vec3 = vsub(vrow(sd.V, vi), o)
    cx: cython.double = dot(c, r)
    cy: cython.double = dot(c, u)
    cz: cython.double = dot(c, f)
    icz: cython.double = 1.0 / cz
    # x = W/2 + kx cx/cz ; y = H/2 + ky cy/cz
    gcx: cython.double = gx * kx * icz
    gcy: cython.double = gy * ky * icz
    gcz: cython.double = -(gx * kx * cx + gy * ky * cy) * icz * icz
    gc: Vec3 = vadd(vadd(vmul(r, gcx), vmul(u, gcy)), vmul(f, gcz))
    acc_v(gb, vi, gc)
    acc_cam(gb, 0, -gc.x)
    acc_cam(gb, 1, -gc.y)
    acc_cam(gb, 2, -gc.z)
    # basis vectors: d cx/d r = c, etc.
    gr: Vec3 = vmul(c, gcx)
    gu: Vec3 = vmul(c, gcy)
    gf: Vec3 = vmul(c, gcz)
    j: cython.int
    i: cython.int
    acc: cython.double
    for j in range(6):
        acc = 0.0
        for i in range(3):
            if i == 0:
                acc += gf.x * sd.camJ[0, 0, j] + gr.x * sd.camJ[1, 0, j] + gu.x * sd.camJ[2, 0, j]
            elif i == 1:
                acc += gf.y * sd.camJ[0, 1, j] + gr.y * sd.camJ[1, 1, j] + gu.y * sd.camJ[2, 1, j]
            else:
                acc += gf.z * sd.camJ[0, 2, j] + gr.z * sd.camJ[1, 2, j] + gu.z * sd.camJ[2, 2, j]
        acc_cam(gb, j, acc)


# ---------------------------------------------------------------------------
# shading

@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def brdf(sd: SceneData, m: cython.int, n: Vec3, wi: Vec3, wo: Vec3) -> Vec3:
    e: cython.double = sd.shin[m]
    h: Vec3 = normalize(vadd(wi, wo))
    c: cython.double = dot(n, h)
    lobe: cython.double = 0.0
    if c > 0.0:
        lobe = (e + 2.0) * 0.5 * INV_PI * pow(c, e)
    return v3(sd.kd[m, 0] * INV_PI + sd.ks[m, 0] * lobe,
              sd.kd[m, 1] * INV_PI + sd.ks[m, 1] * lobe,
              sd.kd[m, 2] * INV_PI + sd.ks[m, 2] * lobe)


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def brdf_vjp(sd: SceneData, gb: GradBuffers, m: cython.int, n: Vec3, wi: Vec3, wo: Vec3, g: Vec3,
             gn: Vec3, gwi: Vec3) -> Pair:
    """Adjoint of the Blinn-Phong lobe with respect to n and wi.

    Returns (gn + dn, gwi + dwi); the wo part comes from :func:`brdf_vjp_wo`.
    Material adjoints are accumulated directly.
    """
    e: cython.double = sd.shin[m]
    hv: Vec3 = vadd(wi, wo)
    hl: cython.double = vlen(hv)
    h: Vec3 = vmul(hv, 1.0 / hl)
    c: cython.double = dot(n, h)
    lobe: cython.double = 0.0
    if c > 0.0:
        lobe = (e + 2.0) * 0.5 * INV_PI * pow(c, e)
    acc_rgb(gb, 0, m, vmul(g, INV_PI))
    acc_rgb(gb, 1, m, vmul(g, lobe))
    gl: cython.double = g.x * sd.ks[m, 0] + g.y * sd.ks[m, 1] + g.z * sd.ks[m, 2]
    if c > 0.0 and gl != 0.0:
        gc: cython.double = gl * (e + 2.0) * 0.5 * INV_PI * e * pow(c, e - 1.0)
        gn = vmad(gn, h, gc)
        ghv: Vec3 = normalize_vjp(h, hl, vmul(n, gc))
        gwi = vadd(gwi, ghv)
    r: Pair = Pair(ax=gn.x, ay=gn.y, az=gn.z, bx=gwi.x, by=gwi.y, bz=gwi.z)
    return r


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def brdf_vjp_wo(sd: SceneData, m: cython.int, n: Vec3, wi: Vec3, wo: Vec3, g: Vec3) -> Vec3:
    """The wo part of the lobe adjoint (the half vector is symmetric in wi, wo)."""
    e: cython.double = sd.shin[m]
    hv: Vec3 = vadd(wi, wo)
    hl: cython.double = vlen(hv)
    h: Vec3 = vmul(hv, 1.0 / hl)
    c: cython.double = dot(n, h)
    gl: cython.double = g.x * sd.ks[m, 0] + g.y * sd.ks[m, 1] + g.z * sd.ks[m, 2]
    if c > 0.0 and gl != 0.0:
        gc: cython.double = gl * (e + 2.0) * 0.5 * INV_PI * e * pow(c, e - 1.0)
        return normalize_vjp(h, hl, vmul(n, gc))
    return v3(0.0, 0.0, 0.0)


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def brdf_bound(sd: SceneData, m: cython.int, n: Vec3, wo: Vec3, wi: Vec3) -> cython.double:
    e: cython.double = sd.shin[m]
    kdm: cython.double = max(sd.kd[m, 0], max(sd.kd[m, 1], sd.kd[m, 2]))
    ksm: cython.double = max(sd.ks[m, 0], max(sd.ks[m, 1], sd.ks[m, 2]))
    c: cython.double = dot(n, normalize(vadd(wi, wo)))
    peak: cython.double = 0.0
    if c > 0.0:
        peak = pow(c, e)
    # the floor keeps every candidate reachable
    return kdm * INV_PI + ksm * (e + 2.0) * 0.5 * INV_PI * peak + 1e-3 * (kdm + ksm)


@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def pick_light(sd: SceneData, u: cython.double) -> cython.int:
    lo: cython.int = 0
    hi: cython.int = sd.nlight - 1
    mid: cython.int
    while lo < hi:
        mid = (lo + hi) // 2
        if u < sd.light_cdf[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def trace(sd: SceneData, o: Vec3, d: Vec3, tmin: cython.double, key: cython.ulonglong,
          k0: cython.int, max_b: cython.int, emit_first: cython.bint, l1: cython.double,
          l2: cython.double, rec: cython.bint, ck: cython.double[:, ::1],
          ci: cython.int[:, ::1]) -> Vec3:
    """Path-trace one radiance sample along (o, d).

    Emission is only added at the first vertex (when ``emit_first``); lights
    are otherwise reached through next-event estimation.  Bounce indices start
    at ``k0`` so continuation paths reuse the dimension layout of the parent.
    With ``rec`` each vertex is checkpointed into row k - k0 of ck/ci.
    """
    L: Vec3 = v3(0.0, 0.0, 0.0)
    beta: Vec3 = v3(1.0, 1.0, 1.0)
    k: cython.int = k0
    j: cython.int = 0
    if rec:
        ci[0, CI_NV] = 0
    while True:
        h: Hit = intersect(sd, o, d, tmin, BIG, False)
        if h.face < 0:
            break
        F: cython.int = h.face
        p: Vec3 = vmad(o, d, h.t)
        ng: Vec3 = vrow(sd.FN, F)
        wo: Vec3 = vmul(d, -1.0)
        sgn: cython.double = 1.0
        if dot(ng, wo) < 0.0:
            sgn = -1.0
        n: Vec3 = vmul(ng, sgn)
        mat: cython.int = sd.fmat[F]
        if rec:
            ckset(ck, j, CK_P, p)
            ckset(ck, j, CK_N, n)
            ckset(ck, j, CK_DIN, d)
            ckset(ck, j, CK_BETA, beta)
            ck[j, CK_SGN] = sgn
            ck[j, CK_HT] = h.t
            ci[j, CI_FACE] = F
            ci[j, CI_LFACE] = -1
            ci[j, CI_VALID] = 0
            ci[j, CI_CONT] = 0
            ckset(ck, j, CK_G, v3(0.0, 0.0, 0.0))
            ckset(ck, j, CK_T, v3(0.0, 0.0, 0.0))
            ci[0, CI_NV] = j + 1
        if emit_first and k == k0:
            L = vadd(L, vhad(beta, vrow(sd.Le, sd.fmesh[F])))
        # next-event estimation
        if sd.nlight > 0:
            li: cython.int = pick_light(sd, rnd(key, path_dim(k, 0)))
            lf: cython.int = sd.light_face[li]
            u1: cython.double = rnd(key, path_dim(k, 1))
            u2: cython.double = rnd(key, path_dim(k, 2))
            if k == k0 and l1 >= 0.0:
                u1 = l1
                u2 = l2
            su: cython.double = sqrt(u1)
            b0: cython.double = 1.0 - su
            b1: cython.double = su * (1.0 - u2)
            b2: cython.double = su * u2
            q: Vec3 = vadd(vadd(vmul(vrow(sd.V, sd.F[lf, 0]), b0), vmul(vrow(sd.V, sd.F[lf, 1]), b1)),
                           vmul(vrow(sd.V, sd.F[lf, 2]), b2))
            pl: cython.double = sd.FA[lf] / sd.light_area
            if rec:
                ci[j, CI_LFACE] = lf
                ckset(ck, j, CK_Q, q)
                ckset(ck, j, CK_LB, v3(b0, b1, b2))
                ck[j, CK_LP] = pl
            if lf != F:
                wi: Vec3 = vsub(q, p)
                dist2: cython.double = dot(wi, wi)
                dist: cython.double = sqrt(dist2)
                w: Vec3 = vmul(wi, 1.0 / dist)
                cos_p: cython.double = dot(n, w)
                cos_q: cython.double = fabs(dot(vrow(sd.FN, lf), w))
                if cos_p > 0.0 and cos_q > 0.0 and not occluded(sd, p, q):
                    fr: Vec3 = brdf(sd, mat, n, w, wo)
                    K: cython.double = cos_p * cos_q / dist2 * sd.FA[lf] / pl
                    G: Vec3 = vmul(vhad(fr, vrow(sd.Le, sd.fmesh[lf])), K)
                    L = vadd(L, vhad(beta, G))
                    if rec:
                        ci[j, CI_VALID] = 1
                        ckset(ck, j, CK_G, G)
        if k >= max_b:
            break
        # indirect bounce: normalize(n + uniform sphere point) is cosine distributed
        z: cython.double = 1.0 - 2.0 * rnd(key, path_dim(k, 3))
        rr: cython.double = sqrt(max(0.0, 1.0 - z * z))
        phi: cython.double = 2.0 * PI * rnd(key, path_dim(k, 4))
        nx: Vec3 = vadd(n, v3(rr * cos(phi), rr * sin(phi), z))
        nxl: cython.double = vlen(nx)
        if nxl < 1e-9:
            break
        wd: Vec3 = vmul(nx, 1.0 / nxl)
        T: Vec3 = vmul(brdf(sd, mat, n, wd, wo), PI)
        if rec:
            ckset(ck, j, CK_DOUT, wd)
            ck[j, CK_NXL] = nxl
            ckset(ck, j, CK_T, T)
            ci[j, CI_CONT] = 1
        beta = vhad(beta, T)
        o = p
        d = wd
        tmin = RAY_EPS
        k += 1
        j += 1
    return L


# ---------------------------------------------------------------------------
# secondary (3D) edges

@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def edge_weight(sd: SceneData, e: cython.int, p: Vec3, n: Vec3, wo: Vec3, F: cython.int,
                mat: cython.int) -> cython.double:
    fa: cython.int = sd.E[e, 2]
    fb: cython.int = sd.E[e, 3]
    if fa == F or fb == F:
        return 0.0
    v0: Vec3 = vrow(sd.V, sd.E[e, 0])
    v1: Vec3 = vrow(sd.V, sd.E[e, 1])
    ed: Vec3 = vsub(v1, v0)
    length: cython.double = vlen(ed)
    d0: Vec3 = vsub(v0, p)
    d1: Vec3 = vsub(v1, p)
    tol: cython.double = 1e-9 * (vlen(d0) + vlen(d1))
    if dot(d0, n) <= tol and dot(d1, n) <= tol:
        return 0.0
    if fb >= 0 and sd.ecrease[e] == 0:
        sa: cython.double = dot(vsub(p, vrow(sd.V, sd.F[fa, 0])), vrow(sd.FN, fa))
        sb: cython.double = dot(vsub(p, vrow(sd.V, sd.F[fb, 0])), vrow(sd.FN, fb))
        if (sa > 0.0) == (sb > 0.0):
            return 0.0
    mid: Vec3 = vsub(vmul(vadd(v0, v1), 0.5), p)
    dist: cython.double = vlen(mid)
    if dist < 0.1 * length:
        dist = 0.1 * length
    return length / dist * brdf_bound(sd, mat, n, wo, vmul(mid, 1.0 / vlen(mid)))


@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def secondary_edges(sd: SceneData, gb: GradBuffers, k: cython.int, p: Vec3, n: Vec3, wo: Vec3,
                    F: cython.int, wb: Vec3, key: cython.ulonglong, max_b: cython.int,
                    n_sec: cython.int) -> Pair:
    """Edge-sample the visibility discontinuities seen from shading point p.

    ``wb`` is the adjoint of the radiance leaving p towards the previous
    vertex, already multiplied by the path throughput.  Edge-vertex terms
    are accumulated directly; the adjoints of p and of the shading normal
    are returned so the caller can chain them along the path.
    """
    gp: Vec3 = v3(0.0, 0.0, 0.0)
    gn: Vec3 = v3(0.0, 0.0, 0.0)
    res: Pair
    mat: cython.int = sd.fmat[F]
    i: cython.int
    e: cython.int
    if n_sec <= 0 or sd.ne == 0:
        res = Pair(ax=0.0, ay=0.0, az=0.0, bx=0.0, by=0.0, bz=0.0)
        return res
    for i in range(n_sec):
        ekey: cython.ulonglong = hk(key, TAG_SEDGE + cython.cast(cython.ulonglong, 64 * k + i))
        # single-uniform weighted reservoir over the candidate edges
        u: cython.double = rnd(ekey, 0)
        wsum: cython.double = 0.0
        chosen: cython.int = -1
        wchosen: cython.double = 0.0
        for e in range(sd.ne):
            we: cython.double = edge_weight(sd, e, p, n, wo, F, mat)
            if we <= 0.0:
                continue
            wsum += we
            pr: cython.double = we / wsum
            if u < pr:
                chosen = e
                wchosen = we
                u = u / pr
            else:
                u = (u - pr) / (1.0 - pr)
        if chosen < 0:
            continue
        pe: cython.double = wchosen / wsum
        a: cython.int = sd.E[chosen, 0]
        b: cython.int = sd.E[chosen, 1]
        fa: cython.int = sd.E[chosen, 2]
        fb: cython.int = sd.E[chosen, 3]
        v0: Vec3 = vrow(sd.V, a)
        v1: Vec3 = vrow(sd.V, b)
        ed: Vec3 = vsub(v1, v0)
        t: cython.double = rnd(ekey, 1)
        om: Vec3 = vsub(vmad(v0, ed, t), p)
        olen: cython.double = vlen(om)
        omh: Vec3 = vmul(om, 1.0 / olen)
        cos_p: cython.double = dot(n, omh)
        if cos_p <= 0.0:
            continue
        v0p: Vec3 = vsub(v0, p)
        v1p: Vec3 = vsub(v1, p)
        Nh: Vec3 = cross(v0p, v1p)
        Nl: cython.double = vlen(Nh)
        if Nl <= 1e-14 * olen * olen:
            gb.rejected += 1
            continue
        nh: Vec3 = vmul(Nh, 1.0 / Nl)
        du: Vec3 = normalize(vmad(omh, nh, 1e-6))
        dl: Vec3 = normalize(vmad(omh, nh, -1e-6))
        hu: Hit = intersect(sd, p, du, RAY_EPS, BIG, False)
        hl: Hit = intersect(sd, p, dl, RAY_EPS, BIG, False)
        if hu.face == hl.face:
            continue
        adj_u: cython.bint = hu.face >= 0 and (hu.face == fa or hu.face == fb)
        adj_l: cython.bint = hl.face >= 0 and (hl.face == fa or hl.face == fb)
        far_sign: cython.double = 0.0
        ffar: cython.int = -1
        m: Vec3
        nm: Vec3
        fb1: cython.double = 0.0
        fb2: cython.double = 0.0
        if adj_u and not adj_l:
            far_sign = -1.0
            ffar = hl.face
            if ffar >= 0:
                m = vmad(p, dl, hl.t)
                fb1 = hl.b1
                fb2 = hl.b2
        elif adj_l and not adj_u:
            far_sign = 1.0
            ffar = hu.face
            if ffar >= 0:
                m = vmad(p, du, hu.t)
                fb1 = hu.b1
                fb2 = hu.b2
        elif adj_u and adj_l:
            # crease seen from p: both sides meet on the edge itself
            m = vadd(p, om)
            nm = vrow(sd.FN, hu.face)
        else:
            continue
        if far_sign != 0.0:
            if ffar >= 0:
                nm = vrow(sd.FN, ffar)
            else:
                # nothing behind the edge: a virtual receiver facing p
                m = vmad(p, om, 2.0)
                nm = vmul(omh, -1.0)
        mp: Vec3 = vsub(m, p)
        sm: cython.double = vlen(mp)
        cos_m: cython.double = fabs(dot(nm, omh))
        den: cython.double = dot(om, nm)
        width: cython.double = vlen(cross(nm, nh))
        if cos_m < 1e-8 or fabs(den) < 1e-8 * olen or width < 1e-8:
            gb.rejected += 1
            continue
        tau: cython.double = dot(mp, nm) / den
        J: Vec3 = vmul(vsub(ed, vmul(om, dot(ed, nm) / den)), tau)
        common: cython.double = vlen(J) / (Nl * width * pe * n_sec)
        fr: Vec3 = brdf(sd, mat, n, omh, wo)
        geo: cython.double = cos_p * cos_m / (sm * sm)
        c1: cython.double = 0.0
        c2: cython.double = 0.0
        if far_sign != 0.0 and ffar >= 0 and sd.memit[sd.fmesh[ffar]] != 0:
            c1 = far_sign * dot(wb, vhad(fr, vrow(sd.Le, sd.fmesh[ffar]))) * geo * common
        if k < max_b:
            kc: cython.ulonglong = hk(ekey, TAG_CONT)
            Lu: Vec3 = v3(0.0, 0.0, 0.0)
            Ll: Vec3 = v3(0.0, 0.0, 0.0)
            if hu.face >= 0:
                Lu = trace(sd, p, du, RAY_EPS, kc, k + 1, max_b, False, -1.0, -1.0, False, sd.ck0, sd.ci0)
            if hl.face >= 0:
                Ll = trace(sd, p, dl, RAY_EPS, kc, k + 1, max_b, False, -1.0, -1.0, False, sd.ck0, sd.ci0)
            c2 = dot(wb, vhad(fr, vsub(Lu, Ll))) * geo * common
        c: cython.double = c1 + c2
        if c == 0.0:
            continue
        g0: Vec3 = cross(v1p, mp)
        g1: Vec3 = cross(mp, v0p)
        acc_v(gb, a, vmul(g0, c))
        acc_v(gb, b, vmul(g1, c))
        gp = vmad(gp, vadd(vadd(Nh, g0), g1), -c)
        if c1 != 0.0:
            # the light sample sits at fixed barycentrics of the emitter
            acc_v(gb, sd.F[ffar, 0], vmul(Nh, c1 * (1.0 - fb1 - fb2)))
            acc_v(gb, sd.F[ffar, 1], vmul(Nh, c1 * fb1))
            acc_v(gb, sd.F[ffar, 2], vmul(Nh, c1 * fb2))
        if c2 != 0.0:
            # direction sample normalize(n + xi) pivots with p and n
            gp = vmad(gp, Nh, c2)
            gn = vmad(gn, Nh, c2 * sm / (2.0 * cos_p))
    res = Pair(ax=gp.x, ay=gp.y, az=gp.z, bx=gn.x, by=gn.y, bz=gn.z)
    return res


# ---------------------------------------------------------------------------
# adjoint replay of one recorded path

@cython.cfunc
@cython.nogil
@cython.exceptval(check=False)
def backprop_path(sd: SceneData, gb: GradBuffers, ck: cython.double[:, ::1], ci: cython.int[:, ::1],
                  w: Vec3, camera: cython.bint, x: cython.double, y: cython.double,
                  key: cython.ulonglong, max_b: cython.int, n_sec: cython.int,
                  emit_first: cython.bint, origin: Vec3) -> cython.void:
    K: cython.int = ci[0, CI_NV]
    R: Vec3 = v3(0.0, 0.0, 0.0)
    carry_p: Vec3 = v3(0.0, 0.0, 0.0)
    carry_d: Vec3 = v3(0.0, 0.0, 0.0)
    k: cython.int
    for k in range(K - 1, -1, -1):
        F: cython.int = ci[k, CI_FACE]
        mat: cython.int = sd.fmat[F]
        p: Vec3 = ckv(ck, k, CK_P)
        n: Vec3 = ckv(ck, k, CK_N)
        din: Vec3 = ckv(ck, k, CK_DIN)
        wo: Vec3 = vmul(din, -1.0)
        beta: Vec3 = ckv(ck, k, CK_BETA)
        wb: Vec3 = vhad(w, beta)
        gp: Vec3 = carry_p
        gn: Vec3 = v3(0.0, 0.0, 0.0)
        gwo: Vec3 = v3(0.0, 0.0, 0.0)
        G: Vec3 = ckv(ck, k, CK_G)
        T: Vec3 = ckv(ck, k, CK_T)
        pr: Pair
        if k == 0 and emit_first:
            acc_rgb(gb, 2, sd.fmesh[F], w)
        if ci[k, CI_VALID]:
            lf: cython.int = ci[k, CI_LFACE]
            lm: cython.int = sd.fmesh[lf]
            q: Vec3 = ckv(ck, k, CK_Q)
            lb: Vec3 = ckv(ck, k, CK_LB)
            pl: cython.double = ck[k, CK_LP]
            wi: Vec3 = vsub(q, p)
            dist2: cython.double = dot(wi, wi)
            dist: cython.double = sqrt(dist2)
            wl: Vec3 = vmul(wi, 1.0 / dist)
            i0: cython.int = sd.F[lf, 0]
            qa: Vec3 = vrow(sd.V, i0)
            Nq: Vec3 = cross(vsub(vrow(sd.V, sd.F[lf, 1]), qa), vsub(vrow(sd.V, sd.F[lf, 2]), qa))
            Nql: cython.double = vlen(Nq)
            nq: Vec3 = vmul(Nq, 1.0 / Nql)
            A: cython.double = 0.5 * Nql
            cq: cython.double = dot(nq, wl)
            sq: cython.double = 1.0 if cq > 0.0 else -1.0
            cos_p: cython.double = dot(n, wl)
            cos_q: cython.double = fabs(cq)
            fr: Vec3 = brdf(sd, mat, n, wl, wo)
            Le: Vec3 = vrow(sd.Le, lm)
            K_: cython.double = cos_p * cos_q / dist2 * A / pl
            acc_rgb(gb, 2, lm, vmul(vhad(wb, fr), K_))
            gK: cython.double = dot(wb, vhad(fr, Le))
            gfr: Vec3 = vmul(vhad(wb, Le), K_)
            gwl: Vec3 = v3(0.0, 0.0, 0.0)
            pr = brdf_vjp(sd, gb, mat, n, wl, wo, gfr, gn, gwl)
            gn = v3(pr.ax, pr.ay, pr.az)
            gwl = v3(pr.bx, pr.by, pr.bz)
            gwo = vadd(gwo, brdf_vjp_wo(sd, mat, n, wl, wo, gfr))
            gcp: cython.double = gK * K_ / cos_p
            gcq: cython.double = gK * K_ / cos_q
            gA: cython.double = gK * K_ / A
            gd2: cython.double = -gK * K_ / dist2
            gn = vmad(gn, wl, gcp)
            gwl = vmad(gwl, n, gcp)
            gnq: Vec3 = vmul(wl, gcq * sq)
            gwl = vmad(gwl, nq, gcq * sq)
            gwi: Vec3 = vmad(normalize_vjp(wl, dist, gwl), wi, 2.0 * gd2)
            gp = vsub(gp, gwi)
            acc_v(gb, sd.F[lf, 0], vmul(gwi, lb.x))
            acc_v(gb, sd.F[lf, 1], vmul(gwi, lb.y))
            acc_v(gb, sd.F[lf, 2], vmul(gwi, lb.z))
            gNq: Vec3 = vmad(normalize_vjp(nq, Nql, gnq), nq, 0.5 * gA)
            face_cross_vjp(sd, gb, lf, gNq)
        if ci[k, CI_CONT] and k + 1 < K:
            wd: Vec3 = ckv(ck, k, CK_DOUT)
            gT: Vec3 = vmul(vhad(wb, R), PI)
            gwd: Vec3 = carry_d
            pr = brdf_vjp(sd, gb, mat, n, wd, wo, gT, gn, gwd)
            gn = v3(pr.ax, pr.ay, pr.az)
            gwd = v3(pr.bx, pr.by, pr.bz)
            gwo = vadd(gwo, brdf_vjp_wo(sd, mat, n, wd, wo, gT))
            gn = vadd(gn, normalize_vjp(wd, ck[k, CK_NXL], gwd))
        if n_sec > 0:
            pr = secondary_edges(sd, gb, k, p, n, wo, F, wb, key, max_b, n_sec)
            gp = vadd(gp, v3(pr.ax, pr.ay, pr.az))
            gn = vadd(gn, v3(pr.bx, pr.by, pr.bz))
        R = vadd(G, vhad(T, R))
        face_normal_vjp(sd, gb, F, ck[k, CK_SGN], gn)
        gdin: Vec3 = vmul(gwo, -1.0)
        o: Vec3
        if k > 0:
            o = ckv(ck, k - 1, CK_P)
        else:
            o = origin
        pr = rayplane_vjp(sd, gb, F, o, din, gp)
        gdin = vadd(gdin, v3(pr.bx, pr.by, pr.bz))
        if k > 0:
            carry_p = v3(pr.ax, pr.ay, pr.az)
            carry_d = gdin
        elif camera:
            acc_cam(gb, 0, pr.ax)
            acc_cam(gb, 1, pr.ay)
            acc_cam(gb, 2, pr.az)
            cam_dir_vjp(sd, gb, x, y, gdin)


# ---------------------------------------------------------------------------
# tile / chunk drivers

@cython.cfunc
@cython.inline
@cython.nogil
@cython.exceptval(check=False)
def jitter(key: cython.ulonglong, s: cython.int, spp: cython.int, kk: cython.int, which: cython.int,
           perm: cython.ulonglong, dim: cython.int) -> cython.double:
    # stratified coordinate (which=0: x, 1: y) of sample s in a kk x kk grid
    cell: cython.int = s
    if perm != 0:
        cell = cython.cast(cython.int, permute32(cython.cast(cython.ulonglong, s),
                                                 cython.cast(cython.ulonglong, spp), perm))
    idx: cython.int = cell % kk if which == 0 else cell // kk
    return (idx + rnd(key, dim)) / kk


@cython.ccall
def render_tile(sd: SceneData, x0: cython.int, x1: cython.int, y0: cython.int, y1: cython.int,
                spp: cython.int, max_b: cython.int, seed: cython.ulonglong, strat: cython.int,
                img: cython.double[:, :, ::1]):
    """Average ``spp`` camera paths per pixel into img[y0:y1, x0:x1]."""
    px: cython.int
    py: cython.int
    s: cython.int
    kk: cython.int = 0
    if strat:
        kk = cython.cast(cython.int, sqrt(spp) + 0.5)
        if kk * kk != spp:
            kk = 0
    o: Vec3 = vat(sd.cam, 0)
    with cython.nogil:
        for py in range(y0, y1):
            for px in range(x0, x1):
                acc: Vec3 = v3(0.0, 0.0, 0.0)
                for s in range(spp):
                    key: cython.ulonglong = pixel_key(seed, px, py, s)
                    x: cython.double
                    y: cython.double
                    l1: cython.double = -1.0
                    l2: cython.double = -1.0
                    if kk > 0:
                        x = px + jitter(key, s, spp, kk, 0, 0, 0)
                        y = py + jitter(key, s, spp, kk, 1, 0, 1)
                        pperm: cython.ulonglong = hk(hk(hk(seed, TAG_PIXEL + 10), cython.cast(cython.ulonglong, px)),
                                   cython.cast(cython.ulonglong, py)) & M32
                        l1 = jitter(key, s, spp, kk, 0, pperm | 1, path_dim(0, 1))
                        l2 = jitter(key, s, spp, kk, 1, pperm | 1, path_dim(0, 2))
                    else:
                        x = px + rnd(key, 0)
                        y = py + rnd(key, 1)
                    d: Vec3 = normalize(cam_dir_un(sd, x, y))
                    acc = vadd(acc, trace(sd, o, d, 0.0, key, 0, max_b, True, l1, l2, False,
                                          sd.ck0, sd.ci0))
                img[py, px, 0] = acc.x / spp
                img[py, px, 1] = acc.y / spp
                img[py, px, 2] = acc.z / spp


@cython.ccall
def backprop_tile(sd: SceneData, gb: GradBuffers, x0: cython.int, x1: cython.int, y0: cython.int,
                  y1: cython.int, spp: cython.int, max_b: cython.int, seed: cython.ulonglong,
                  strat: cython.int, adj: cython.double[:, :, ::1], n_sec: cython.int,
                  ck: cython.double[:, ::1], ci: cython.int[:, ::1], out: cython.double[:, ::1]):
    """Replay the camera paths of a tile and accumulate their adjoints.

    In projection mode ``out[py, px]`` receives the tangent-projected
    derivative of each pixel; otherwise ``out`` is ignored.
    """
    px: cython.int
    py: cython.int
    s: cython.int
    kk: cython.int = 0
    if strat:
        kk = cython.cast(cython.int, sqrt(spp) + 0.5)
        if kk * kk != spp:
            kk = 0
    o: Vec3 = vat(sd.cam, 0)
    inv: cython.double = 1.0 / spp
    with cython.nogil:
        for py in range(y0, y1):
            for px in range(x0, x1):
                w: Vec3 = v3(adj[py, px, 0] * inv, adj[py, px, 1] * inv, adj[py, px, 2] * inv)
                if w.x == 0.0 and w.y == 0.0 and w.z == 0.0:
                    continue
                if gb.project:
                    gb.proj = 0.0
                for s in range(spp):
                    key: cython.ulonglong = pixel_key(seed, px, py, s)
                    x: cython.double
                    y: cython.double
                    l1: cython.double = -1.0
                    l2: cython.double = -1.0
                    if kk > 0:
                        x = px + jitter(key, s, spp, kk, 0, 0, 0)
                        y = py + jitter(key, s, spp, kk, 1, 0, 1)
                        pperm: cython.ulonglong = hk(hk(hk(seed, TAG_PIXEL + 10), cython.cast(cython.ulonglong, px)),
                                                     cython.cast(cython.ulonglong, py)) & M32
                        l1 = jitter(key, s, spp, kk, 0, pperm | 1, path_dim(0, 1))
                        l2 = jitter(key, s, spp, kk, 1, pperm | 1, path_dim(0, 2))
                    else:
                        x = px + rnd(key, 0)
                        y = py + rnd(key, 1)
                    d: Vec3 = normalize(cam_dir_un(sd, x, y))
                    trace(sd, o, d, 0.0, key, 0, max_b, True, l1, l2, True, ck, ci)
                    backprop_path(sd, gb, ck, ci, w, True, x, y, key, max_b, n_sec, True, o)
                if gb.project:
                    out[py, px] = gb.proj


@cython.ccall
def primary_edge_chunk(sd: SceneData, gb: GradBuffers, cand: cython.double[:, ::1],
                       cdf: cython.double[::1], total_len: cython.double, n_total: cython.long,
                       j0: cython.long, j1: cython.long, seed: cython.ulonglong, max_b: cython.int,
                       eps: cython.double, adj: cython.double[:, :, ::1], out: cython.double[:, ::1]):
    """Screen-space edge samples j0..j1-1 out of n_total.

    cand rows: edge id, a_x, a_y, b_x, b_y, clipped t0, t1, clipped length.
    """
    j: cython.long
    nc: cython.int = cand.shape[0]
    o: Vec3 = vat(sd.cam, 0)
    if nc == 0:
        return
    with cython.nogil:
        for j in range(j0, j1):
            key: cython.ulonglong = hk(hk(seed, TAG_PEDGE), cython.cast(cython.ulonglong, j))
            u: cython.double = rnd(key, 0)
            lo: cython.int = 0
            hi: cython.int = nc - 1
            while lo < hi:
                mid: cython.int = (lo + hi) // 2
                if u < cdf[mid]:
                    hi = mid
                else:
                    lo = mid + 1
            ax: cython.double = cand[lo, 1]
            ay: cython.double = cand[lo, 2]
            bx: cython.double = cand[lo, 3]
            by: cython.double = cand[lo, 4]
            tt: cython.double = cand[lo, 5] + rnd(key, 1) * (cand[lo, 6] - cand[lo, 5])
            x: cython.double = ax + tt * (bx - ax)
            y: cython.double = ay + tt * (by - ay)
            ipx: cython.int = cython.cast(cython.int, floor(x))
            ipy: cython.int = cython.cast(cython.int, floor(y))
            if ipx < 0:
                ipx = 0
            if ipx >= sd.W:
                ipx = sd.W - 1
            if ipy < 0:
                ipy = 0
            if ipy >= sd.H:
                ipy = sd.H - 1
            w: Vec3 = v3(adj[ipy, ipx, 0], adj[ipy, ipx, 1], adj[ipy, ipx, 2])
            if w.x == 0.0 and w.y == 0.0 and w.z == 0.0:
                continue
            A: cython.double = ay - by
            B: cython.double = bx - ax
            nrm: cython.double = sqrt(A * A + B * B)
            kc: cython.ulonglong = hk(key, TAG_CONT)
            du: Vec3 = normalize(cam_dir_un(sd, x + eps * A / nrm, y + eps * B / nrm))
            dl: Vec3 = normalize(cam_dir_un(sd, x - eps * A / nrm, y - eps * B / nrm))
            fu: Vec3 = trace(sd, o, du, 0.0, kc, 0, max_b, True, -1.0, -1.0, False, sd.ck0, sd.ci0)
            fl: Vec3 = trace(sd, o, dl, 0.0, kc, 0, max_b, True, -1.0, -1.0, False, sd.ck0, sd.ci0)
            delta: cython.double = dot(w, vsub(fu, fl))
            if delta == 0.0:
                continue
            coef: cython.double = delta * total_len / (nrm * n_total)
            ei: cython.int = cython.cast(cython.int, cand[lo, 0])
            if gb.project:
                gb.proj = 0.0
            projection_vjp(sd, gb, sd.E[ei, 0], coef * (by - y), coef * (x - bx))
            projection_vjp(sd, gb, sd.E[ei, 1], coef * (y - ay), coef * (ax - x))
            if gb.project:
                out[ipy, ipx] += gb.proj


# ---------------------------------------------------------------------------
# thin Python entry points (tests, single-path API)

def py_rnd(key, dim):
    return rnd(key, dim)


def py_hk(a, b):
    return hk(a, b)


def py_pixel_key(seed, px, py, s):
    return pixel_key(seed, px, py, s)


def py_permute(i, n, p):
    return permute32(i, n, p & M32)


def py_intersect(sd: SceneData, o, d, tmin, tmax, any_hit=False):
    h: Hit = intersect(sd, v3(o[0], o[1], o[2]), v3(d[0], d[1], d[2]), tmin, tmax, any_hit)
    return h.face, h.t, h.b1, h.b2


def py_occluded(sd: SceneData, p, q):
    return bool(occluded(sd, v3(p[0], p[1], p[2]), v3(q[0], q[1], q[2])))


def py_camera_dir(sd: SceneData, x, y):
    d: Vec3 = normalize(cam_dir_un(sd, x, y))
    return d.x, d.y, d.z


def py_trace(sd: SceneData, o, d, tmin, key, max_b, emit_first, rec, ck, ci):
    L: Vec3 = trace(sd, v3(o[0], o[1], o[2]), v3(d[0], d[1], d[2]), tmin, key, 0, max_b,
                    emit_first, -1.0, -1.0, rec, ck, ci)
    return L.x, L.y, L.z


def py_backprop_path(sd: SceneData, gb: GradBuffers, ck, ci, w, camera, x, y, key, max_b, n_sec,
                     emit_first, origin):
    backprop_path(sd, gb, ck, ci, v3(w[0], w[1], w[2]), camera, x, y, key, max_b, n_sec,
                  emit_first, v3(origin[0], origin[1], origin[2]))


def py_edge_weights(sd: SceneData, p, n, wo, face, out):
    pv: Vec3 = v3(p[0], p[1], p[2])
    nv: Vec3 = v3(n[0], n[1], n[2])
    wv: Vec3 = v3(wo[0], wo[1], wo[2])
    mat: cython.int = sd.fmat[face] if face >= 0 else 0
    e: cython.int
    for e in range(sd.ne):
        out[e] = edge_weight(sd, e, pv, nv, wv, face, mat)


def py_secondary_edges(sd: SceneData, gb: GradBuffers, k, p, n, wo, face, wb, key, max_b, n_sec):
    pr: Pair = secondary_edges(sd, gb, k, v3(p[0], p[1], p[2]), v3(n[0], n[1], n[2]),
                               v3(wo[0], wo[1], wo[2]), face, v3(wb[0], wb[1], wb[2]), key, max_b, n_sec)
    return (pr.ax, pr.ay, pr.az), (pr.bx, pr.by, pr.bz)
