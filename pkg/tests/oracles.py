"""Plain-Python scalar loops used as independent references.

Nothing here touches the autodiff engine or numpy vectorization beyond
reading array elements, so agreement with the package is meaningful.
"""
import math


def gaussian(size=11, sigma=1.5):
    half = (size - 1) / 2
    g = [[math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma)) for j in range(size)]
         for i in range(size)]
    total = sum(sum(row) for row in g)
    return [[v / total for v in row] for row in g]


def ssim_2d(a, b, k1=0.01, k2=0.03, L=1.0, size=11, sigma=1.5):
    """Mean SSIM of two H x W arrays over every valid window."""
    w = gaussian(size, sigma)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    H, W = len(a), len(a[0])
    vals = []
    for y in range(H - size + 1):
        for x in range(W - size + 1):
            ma = mb = 0.0
            for i in range(size):
                for j in range(size):
                    ma += w[i][j] * a[y + i][x + j]
                    mb += w[i][j] * b[y + i][x + j]
            va = vb = cov = 0.0
            for i in range(size):
                for j in range(size):
                    da = a[y + i][x + j] - ma
                    db = b[y + i][x + j] - mb
                    va += w[i][j] * da * da
                    vb += w[i][j] * db * db
                    cov += w[i][j] * da * db
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def ssim_hwc(a, b):
    C = a.shape[2]
    return sum(ssim_2d(a[:, :, c].tolist(), b[:, :, c].tolist()) for c in range(C)) / C


def psnr(a, b):
    flat_a, flat_b = a.ravel().tolist(), b.ravel().tolist()
    mse = sum((p - q) ** 2 for p, q in zip(flat_a, flat_b)) / len(flat_a)
    return 10 * math.log10(1 / mse)


def mu_law(v, mu=5000.0):
    v = min(max(v, 0.0), 1.0)
    return math.log(1 + mu * v) / math.log(1 + mu)


def _reflect(i, n):
    if i < 0:
        return -i
    if i > n - 1:
        return 2 * (n - 1) - i
    return i


def sobel_2d(img):
    """x and y Sobel responses of an H x W list with reflected borders."""
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    H, W = len(img), len(img[0])
    gx = [[0.0] * W for _ in range(H)]
    gy = [[0.0] * W for _ in range(H)]
    for y in range(H):
        for x in range(W):
            for i in range(3):
                for j in range(3):
                    v = img[_reflect(y + i - 1, H)][_reflect(x + j - 1, W)]
                    gx[y][x] += kx[i][j] * v
                    gy[y][x] += kx[j][i] * v
    return gx, gy


def branch_loss(h, g, alpha=0.2, beta=0.5, mu=5000.0):
    """Loss of one ``C x H x W`` prediction against its ground truth."""
    C, H, W = h.shape
    th = [[[mu_law(h[c, y, x], mu) for x in range(W)] for y in range(H)] for c in range(C)]
    tg = [[[mu_law(g[c, y, x], mu) for x in range(W)] for y in range(H)] for c in range(C)]
    l_re = sum(abs(th[c][y][x] - tg[c][y][x]) for c in range(C) for y in range(H) for x in range(W))
    l_re /= C * H * W
    l_ssim = 1 - sum(ssim_2d(th[c], tg[c]) for c in range(C)) / C
    l_grad = 0.0
    for c in range(C):
        hx, hy = sobel_2d(h[c].tolist())
        gx, gy = sobel_2d(g[c].tolist())
        l_grad += sum(abs(hx[y][x] - gx[y][x]) + abs(hy[y][x] - gy[y][x])
                      for y in range(H) for x in range(W))
    l_grad /= 2 * C * H * W
    return l_re + alpha * l_ssim + beta * l_grad
