"""Scratch experiment: compare error conventions/diagonals to the reference table."""
import numpy as np
import mfgfem as mf
from mfgfem.assembly import element_gradients, point_values
from mfgfem.quadrature import gauss_legendre
from mfgfem.cli import level_grid
from mfgfem.mesh import Mesh

REF = {  # h, then the six plotted values per level k
    1: (0.7006612, 0.6149608, 0.7018799, 0.7756508, 0.6241043, 0.7016681),
    2: (0.4321884, 0.4093697, 0.378799, 0.4737106, 0.2682495, 0.3803955),
    3: (0.2347566, 0.2559373, 0.1899179, 0.2608107, 0.1108376, 0.1911599),
    4: (0.1222251, 0.1331117, 0.09433648, 0.1365934, 0.0480436, 0.0950924),
    5: (0.06239205, 0.07477188, 0.04696553, 0.06991479, 0.02192813, 0.04734029),
}
COLS = ("u_H1", "b", "m_L2", "m_H1", "u0", "mT")


def flipped_square(n):
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (jj * (n + 1) + ii).ravel()
    b = a + 1
    c = b + (n + 1)
    d = a + (n + 1)
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, d])
    tris[1::2] = np.column_stack([b, c, d])
    return Mesh(vertices, tris)


def errors(sol, case, grid, rule):
    fes = sol.fes
    area, wq = fes.mesh.tri_area, fes.quad_w
    xq, yq = fes.quad_xy[..., 0], fes.quad_xy[..., 1]
    cellint = lambda v: float(((v @ wq) * area).sum())
    tau = grid.tau
    num = np.zeros(4)
    den = np.zeros(4)
    for i in range(grid.num_slabs):
        gu = element_gradients(fes, sol.u.slabs[i])
        gm = element_gradients(fes, sol.m.slabs[i])
        vm = point_values(fes, sol.m.slabs[i])
        bn = sol.b.values[i]
        t0, t1 = grid.times[i], grid.times[i + 1]
        if rule == "gauss3":
            pts = list(zip(*gauss_legendre(3, t0, t1)))
        elif rule == "left":
            pts = [(t0, tau)]
        elif rule == "right":
            pts = [(t1, tau)]
        else:
            pts = [(0.5 * (t0 + t1), tau)]
        for t, w in pts:
            uex, uey = case.u_x(t, xq, yq), case.u_y(t, xq, yq)
            num[0] += w * cellint((gu[:, :1] - uex) ** 2 + (gu[:, 1:] - uey) ** 2)
            den[0] += w * cellint(uex**2 + uey**2)
            bs = case.b_star(t, xq, yq)
            num[1] += w * cellint((bn[:, :1] - bs[..., 0]) ** 2 + (bn[:, 1:] - bs[..., 1]) ** 2)
            den[1] += w * cellint(bs[..., 0] ** 2 + bs[..., 1] ** 2)
            me = case.m(t, xq, yq)
            num[2] += w * cellint((vm - me) ** 2)
            den[2] += w * cellint(me**2)
            mex, mey = case.m_x(t, xq, yq), case.m_y(t, xq, yq)
            num[3] += w * cellint((gm[:, :1] - mex) ** 2 + (gm[:, 1:] - mey) ** 2)
            den[3] += w * cellint(mex**2 + mey**2)
    u0h = point_values(fes, sol.u.initial())
    u0e = case.u(0.0, xq, yq)
    mTh = point_values(fes, sol.m.terminal())
    mTe = case.m(1.0, xq, yq)
    out = list(np.sqrt(num / den))
    out.append(np.sqrt(cellint((u0h - u0e) ** 2) / cellint(u0e**2)))
    out.append(np.sqrt(cellint((mTh - mTe) ** 2) / cellint(mTe**2)))
    return out


prob, case = mf.manufactured()
for diag in ("main", "flipped"):
    print(f"### diagonal = {diag}", flush=True)
    for k in (1, 2, 3, 4, 5):
        n = 2**k
        mesh = mf.generate_uniform_unit_square(n) if diag == "main" else flipped_square(n)
        grid = level_grid(n)
        sol = mf.solve(prob, mesh, grid)
        print(f"k={k} iters={sol.outer_iterations}", flush=True)
        for rule in ("gauss3", "left", "right", "mid"):
            got = errors(sol, case, grid, rule)
            dev = [(g - r) / r for g, r in zip(got, REF[k])]
            print(
                f"  {rule:7s} "
                + " ".join(f"{c}:{d:+.3%}" for c, d in zip(COLS, dev)),
                flush=True,
            )
