"""Regenerates anova_fixture.csv and anova_oracle.csv.

The oracle uses textbook sums of squares over cell means and Box's epsilon
from double-centered covariance matrices; it shares no code with the crate.
"""
import csv

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240611)
n, a, b = 12, 3, 3
subject = rng.normal(0.0, 800.0, size=(n, 1, 1))
l_eff = np.array([0.0, 2500.0, 6000.0]).reshape(1, a, 1)
k_eff = np.array([0.0, 900.0, 2100.0]).reshape(1, 1, b)
lk = np.array([[0, 0, 0], [0, 150, 400], [0, 300, 1100.0]]).reshape(1, a, b)
# Unequal error spread per cell so sphericity fails.
spread = np.array([[300, 400, 700], [350, 600, 1200], [500, 900, 1800.0]])
noise = rng.normal(size=(n, a, b)) * spread
# A slope across participants on the L2 cells adds covariance structure.
trend = np.linspace(-1, 1, n).reshape(n, 1, 1) * np.array([0, 300, 900.0]).reshape(1, a, 1)
y = np.round(12000.0 + subject + l_eff + k_eff + lk + noise + trend, 3)

with open("anova_fixture.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["participant", "level_l", "level_k", "value"])
    for i in range(n):
        for l in range(a):
            for k in range(b):
                w.writerow([f"S{i + 1:02d}", l, k, f"{y[i, l, k]:.3f}"])

grand = y.mean()
m_s = y.mean(axis=(1, 2))
m_l = y.mean(axis=(0, 2))
m_k = y.mean(axis=(0, 1))
m_lk = y.mean(axis=0)
m_sl = y.mean(axis=2)
m_sk = y.mean(axis=1)

ss_l = n * b * ((m_l - grand) ** 2).sum()
ss_k = n * a * ((m_k - grand) ** 2).sum()
ss_lk = n * ((m_lk - m_l[:, None] - m_k[None, :] + grand) ** 2).sum()
ss_ls = b * ((m_sl - m_s[:, None] - m_l[None, :] + grand) ** 2).sum()
ss_ks = a * ((m_sk - m_s[:, None] - m_k[None, :] + grand) ** 2).sum()
resid = (
    y
    - m_sl[:, :, None]
    - m_sk[:, None, :]
    - m_lk[None, :, :]
    + m_s[:, None, None]
    + m_l[None, :, None]
    + m_k[None, None, :]
    - grand
)
ss_lks = (resid**2).sum()


def center(k):
    return np.eye(k) - np.ones((k, k)) / k


def box_epsilon(cov, proj, df):
    m = proj @ cov @ proj
    return np.trace(m) ** 2 / (df * np.trace(m @ m))


cov_l = np.cov(y.mean(axis=2), rowvar=False)
cov_k = np.cov(y.mean(axis=1), rowvar=False)
cov_lk = np.cov(y.reshape(n, a * b), rowvar=False)
eps_l = box_epsilon(cov_l, center(a), a - 1)
eps_k = box_epsilon(cov_k, center(b), b - 1)
eps_lk = box_epsilon(cov_lk, np.kron(center(a), center(b)), (a - 1) * (b - 1))

rows = []
for name, ss, sse, df1, eps in [
    ("L", ss_l, ss_ls, a - 1, eps_l),
    ("K", ss_k, ss_ks, b - 1, eps_k),
    ("LxK", ss_lk, ss_lks, (a - 1) * (b - 1), eps_lk),
]:
    df2 = df1 * (n - 1)
    F = (ss / df1) / (sse / df2)
    eps = min(1.0, max(1.0 / df1, eps))
    rows.append(
        [
            name,
            df1,
            df2,
            ss,
            sse,
            F,
            eps,
            stats.f.sf(F, eps * df1, eps * df2),
            stats.f.sf(F, df1, df2),
            ss / (ss + sse),
        ]
    )

total_within = ((y - m_s[:, None, None]) ** 2).sum()
assert abs(total_within - (ss_l + ss_k + ss_lk + ss_ls + ss_ks + ss_lks)) < 1e-6 * total_within

with open("anova_oracle.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["effect", "df_effect", "df_error", "ss_effect", "ss_error", "f", "gg_epsilon", "p", "p_uncorrected", "partial_eta_sq"])
    for r in rows:
        w.writerow([r[0], r[1], r[2]] + [repr(float(v)) for v in r[3:]])
