"""Independent numpy computation of the two-level worked example.

Run: python3 docs/worked_example.py
Prints every intermediate listed in docs/worked_example.md.
"""
import numpy as np

np.set_printoptions(precision=17, suppress=False)

# Two levels (3 and 4), two channels, reduction ratio 1, LN eps 1e-5.
# Level 3 is 2x2 and level 4 is 1x1; every map is constant per channel.
c3 = np.array([1.0, 2.0])   # per-channel constants of C^3 (2x2)
c4 = np.array([3.0, -1.0])  # per-channel constants of C^4 (1x1)
eps = 1e-5

w1 = np.array([[0.5, -0.25, 0.125, 0.0],
               [0.0, 0.5, -0.5, 0.25],
               [0.25, 0.0, 0.5, -0.125],
               [-0.5, 0.25, 0.0, 0.5]])
w2 = np.array([[0.5, 0.0, -0.25, 0.125],
               [0.25, -0.5, 0.0, 0.5],
               [0.0, 0.25, 0.5, -0.25],
               [-0.125, 0.5, 0.25, 0.0]])

def branch(k):
    w = np.array([[0.5, -0.25], [0.25, 0.5]]) * (1 + 0.5 * k)
    gamma = np.array([1.0, 0.5])
    beta = np.array([0.0, 0.25])
    v = np.array([[0.5, -0.5], [0.25, 0.0], [-0.25, 0.5], [0.0, 0.25]]) * (1 - 0.25 * k)
    return w, gamma, beta, v

theta = np.array([[0.5, -0.5]])  # [C/2, C]
phi = np.array([[0.25, 0.5]])
g = np.array([[1.0, -0.5]])
w_z = np.array([[0.5], [-0.25]])  # [C, C/2]

# Gather to level 3 (2x2): upsampling a 1x1 map keeps its constant.
D = [c3, c4]
x = np.concatenate(D)                       # GAP of constant maps
s = 1 / (1 + np.exp(-(w2 @ np.maximum(w1 @ x, 0))))
Q = [s[0:2] * c3, s[2:4] * c4]

def combine(k):
    w, gamma, beta, v = branch(k)
    gctx = Q[0] + Q[1]
    y = w @ gctx
    ln = gamma * (y - y.mean()) / np.sqrt(y.var() + eps) + beta
    z = np.maximum(ln, 0)
    M = (v @ z).reshape(2, 2)               # level-major
    A = np.exp(M) / np.exp(M).sum(axis=0)
    F = A[0] * Q[0] + A[1] * Q[1]
    return z, M, A, F

out = {}
for k, name in [(0, "local3"), (1, "local4"), (2, "global")]:
    out[name] = combine(k)

Fg = out["global"][3]
# Constant maps: every position has the same embedding, so attention is uniform
# and y equals g . Fg at each position.
y = g @ Fg
G = Fg + w_z @ y
F3 = out["local3"][3] + G
F4 = out["local4"][3] + G
# Scatter: level 3 keeps 2x2; level 4 is max-pooled from a constant 2x2 map.
Fhat3 = F3 + c3
Fhat4 = F4 + c4

print("x =", x)
print("s =", s)
print("Q3 =", Q[0]); print("Q4 =", Q[1])
for name in ["local3", "local4", "global"]:
    z, M, A, F = out[name]
    print(f"[{name}] z =", z); print(f"[{name}] M =", M.ravel()); print(f"[{name}] A =", A.ravel()); print(f"[{name}] F =", F)
print("G =", G)
print("out3 =", Fhat3)
print("out4 =", Fhat4)
