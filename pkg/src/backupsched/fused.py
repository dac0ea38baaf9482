"""Compiled training kernels for the fixed actor/critic topology.

One DDPG update (Bellman targets, critic Adam step, policy gradient, actor
Adam step, target blending) runs as a single numba call.  At these layer sizes
the numpy route in :mod:`backupsched.nn` spends most of its time dispatching
small operations, so fusing is several times faster.  The numpy route stays
the reference implementation and the two are cross-checked in the tests.

Every scalar handed to a kernel is cast to the network dtype first, so float32
networks compute in float32 throughout.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import nn
from .env import MIN_STEP

U_MIN = MIN_STEP - 1.0

ERR_NONFINITE_CRITIC = 1
ERR_NONFINITE_ACTOR = 2


def offsets(net: nn.NetworkParams) -> np.ndarray:
    """Start of each weight and bias block, in layer order."""
    out = []
    for layer in net.layers:
        ws, bs = net.slices[layer.name]
        out += [ws.start, bs.start]
    return np.array(out, dtype=np.int64)


@njit(cache=True)
def _mat(flat, start, rows, cols):
    return flat[start:start + rows * cols].reshape(rows, cols)


@njit(cache=True)
def _relu(z):
    return np.maximum(z, z.dtype.type(0))


@njit(cache=True)
def _actor_forward(flat, off, x, H):
    B, k = x.shape
    one = flat.dtype.type(1)
    half = flat.dtype.type(0.5)
    h1 = _relu(np.dot(x, _mat(flat, off[0], k, H)) + flat[off[1]:off[1] + H])
    h2 = _relu(np.dot(h1, _mat(flat, off[2], H, H)) + flat[off[3]:off[3] + H])
    z = np.dot(h2, _mat(flat, off[4], H, k - 1)) + flat[off[5]:off[5] + k - 1]
    p = np.empty_like(z)
    for i in range(B):
        e = np.exp(z[i] - z[i].max())
        p[i] = e / e.sum()
    zu = np.dot(h2, _mat(flat, off[6], H, 1)) + flat[off[7]:off[7] + 1]
    u = half * (one + np.tanh(half * zu))
    return h1, h2, p, u


@njit(cache=True)
def _critic_forward(flat, off, s, a, H):
    B, k = s.shape
    s1 = _relu(np.dot(s, _mat(flat, off[0], k, H)) + flat[off[1]:off[1] + H])
    s2 = np.dot(s1, _mat(flat, off[2], H, H)) + flat[off[3]:off[3] + H]
    a1 = np.dot(a, _mat(flat, off[4], k, H)) + flat[off[5]:off[5] + H]
    c = np.empty((B, 2 * H), dtype=flat.dtype)
    c[:, :H] = s2
    c[:, H:] = a1
    h1 = _relu(np.dot(c, _mat(flat, off[6], 2 * H, H)) + flat[off[7]:off[7] + H])
    h2 = _relu(np.dot(h1, _mat(flat, off[8], H, H)) + flat[off[9]:off[9] + H])
    q = np.dot(h2, _mat(flat, off[10], H, 1)) + flat[off[11]:off[11] + 1]
    return s1, c, h1, h2, q


@njit(cache=True)
def _dense_grad(grads, wo, bo, x, dz):
    n_in = x.shape[1]
    n_out = dz.shape[1]
    _mat(grads, wo, n_in, n_out)[:, :] = np.dot(np.ascontiguousarray(x.T), dz)
    grads[bo:bo + n_out] = dz.sum(axis=0)


@njit(cache=True)
def _critic_backward(flat, off, s, a, s1, c, h1, h2, g, H, grads, want_params):
    """Parameter grads (into ``grads`` when ``want_params``) and the action-input gradient."""
    k = s.shape[1]
    zero = flat.dtype.type(0)
    if want_params:
        _dense_grad(grads, off[10], off[11], h2, g)
    dh2 = np.dot(g, np.ascontiguousarray(_mat(flat, off[10], H, 1).T)) * (h2 > zero)
    if want_params:
        _dense_grad(grads, off[8], off[9], h1, dh2)
    dh1 = np.dot(dh2, np.ascontiguousarray(_mat(flat, off[8], H, H).T)) * (h1 > zero)
    if want_params:
        _dense_grad(grads, off[6], off[7], c, dh1)
    dc = np.dot(dh1, np.ascontiguousarray(_mat(flat, off[6], 2 * H, H).T))
    da1 = np.ascontiguousarray(dc[:, H:])
    if want_params:
        _dense_grad(grads, off[4], off[5], a, da1)
        ds2 = np.ascontiguousarray(dc[:, :H])
        _dense_grad(grads, off[2], off[3], s1, ds2)
        ds1 = np.dot(ds2, np.ascontiguousarray(_mat(flat, off[2], H, H).T)) * (s1 > zero)
        _dense_grad(grads, off[0], off[1], s, ds1)
        return da1
    return np.dot(da1, np.ascontiguousarray(_mat(flat, off[4], k, H).T))


@njit(cache=True)
def _actor_backward(flat, off, x, h1, h2, p, u, g, H, grads):
    k = x.shape[1]
    one = flat.dtype.type(1)
    zero = flat.dtype.type(0)
    gp = np.ascontiguousarray(g[:, :k - 1])
    gu = np.ascontiguousarray(g[:, k - 1:])
    dzp = np.empty_like(p)
    for i in range(p.shape[0]):
        dzp[i] = p[i] * (gp[i] - (gp[i] * p[i]).sum())
    dzu = gu * u * (one - u)
    _dense_grad(grads, off[4], off[5], h2, dzp)
    _dense_grad(grads, off[6], off[7], h2, dzu)
    dh2 = (np.dot(dzp, np.ascontiguousarray(_mat(flat, off[4], H, k - 1).T))
           + np.dot(dzu, np.ascontiguousarray(_mat(flat, off[6], H, 1).T))) * (h2 > zero)
    _dense_grad(grads, off[2], off[3], h1, dh2)
    dh1 = np.dot(dh2, np.ascontiguousarray(_mat(flat, off[2], H, H).T)) * (h1 > zero)
    _dense_grad(grads, off[0], off[1], x, dh1)


@njit(cache=True)
def _finite_sum(x):
    total = x.dtype.type(0)
    for v in x:
        total += v * x.dtype.type(0)
    return np.isfinite(total)


@njit(cache=True)
def _adam(flat, grads, m, v, sign, b1, b2, lr_t, eps_t, flush, flush_below):
    one = flat.dtype.type(1)
    zero = flat.dtype.type(0)
    for i in range(flat.shape[0]):
        g = sign * grads[i]
        mi = b1 * m[i] + (one - b1) * g
        vi = b2 * v[i] + (one - b2) * (g * g)
        if flush:
            if abs(mi) < flush_below:
                mi = zero
            if vi < flush_below:
                vi = zero
        m[i] = mi
        v[i] = vi
        flat[i] -= lr_t * mi / (math.sqrt(vi) + eps_t)


@njit(cache=True)
def _blend(target, online, tau):
    for i in range(target.shape[0]):
        target[i] += tau * (online[i] - target[i])


@njit(cache=True)
def ddpg_update(S, A, R, S2, H, gamma, tau, u_min,
                actor, actor_t, critic, critic_t, a_off, c_off,
                am, av, a_lr_t, a_eps_t, a_flush,
                cm, cv, c_lr_t, c_eps_t, c_flush,
                b1, b2, flush_below):
    """One full DDPG update in place; returns ``(error code, critic loss, actor objective)``."""
    B, k = S.shape
    one = S.dtype.type(1)
    two = S.dtype.type(2)
    inv_n = one / S.dtype.type(B)

    # Bellman targets from the target networks and the target actor's greedy action
    _, _, p_n, u_n = _actor_forward(actor_t, a_off, S2, H)
    enc = np.zeros((B, k), dtype=S.dtype)
    for i in range(B):
        enc[i, np.argmax(p_n[i])] = one
        enc[i, k - 1] = min(max(u_n[i, 0], u_min), one)
    q_n = _critic_forward(critic_t, c_off, S2, enc, H)[4]
    y = R + gamma * q_n[:, 0]

    # critic: one Adam step on the mean squared Bellman error
    s1, c, h1, h2, q = _critic_forward(critic, c_off, S, A, H)
    err = q[:, 0] - y
    loss = (err * err).sum() * inv_n
    g = np.empty((B, 1), dtype=S.dtype)
    g[:, 0] = (two * inv_n) * err
    c_grads = np.empty_like(critic)
    _critic_backward(critic, c_off, S, A, s1, c, h1, h2, g, H, c_grads, True)
    if not _finite_sum(c_grads):
        return ERR_NONFINITE_CRITIC, loss, S.dtype.type(0)
    _adam(critic, c_grads, cm, cv, one, b1, b2, c_lr_t, c_eps_t, c_flush, flush_below)

    # actor: ascend mean Q(s, actor(s)) under the updated critic
    x_h1, x_h2, p, u = _actor_forward(actor, a_off, S, H)
    out = np.empty((B, k), dtype=S.dtype)
    out[:, :k - 1] = p
    out[:, k - 1:] = u
    s1, c, h1, h2, q = _critic_forward(critic, c_off, S, out, H)
    objective = q[:, 0].sum() * inv_n
    g[:, 0] = inv_n
    dq_da = _critic_backward(critic, c_off, S, out, s1, c, h1, h2, g, H, c_grads, False)
    a_grads = np.empty_like(actor)
    _actor_backward(actor, a_off, S, x_h1, x_h2, p, u, dq_da, H, a_grads)
    if not _finite_sum(a_grads):
        return ERR_NONFINITE_ACTOR, loss, objective
    _adam(actor, a_grads, am, av, -one, b1, b2, a_lr_t, a_eps_t, a_flush, flush_below)

    _blend(critic_t, critic, tau)
    _blend(actor_t, actor, tau)
    return 0, loss, objective


@njit(cache=True)
def actor_greedy(flat, off, s, H, u_min):
    """Greedy ``(device, u)`` for one state, ``u`` clamped to ``[u_min, 1]``."""
    x = np.empty((1, s.shape[0]), dtype=flat.dtype)
    x[0] = s
    _, _, p, u = _actor_forward(flat, off, x, H)
    return np.argmax(p[0]), min(max(u[0, 0], u_min), flat.dtype.type(1))


def _adam_scalars(opt: nn.AdamState, dtype):
    t = opt.t + 1
    lr_t = opt.lr * math.sqrt(1.0 - opt.beta2**t) / (1.0 - opt.beta1**t)
    eps_t = opt.eps * math.sqrt(1.0 - opt.beta2**t)
    return dtype(lr_t), dtype(eps_t), t % nn.FLUSH_EVERY == 0


class FusedTrainer:
    """Holds the kernel arguments that stay fixed for one agent."""

    def __init__(self, agent):
        self.agent = agent
        self.dtype = agent.actor.dtype.type
        self.hidden = agent.actor.layers[0].n_out
        self.a_off = offsets(agent.actor)
        self.c_off = offsets(agent.critic)

    def update(self, batch) -> tuple[float, float]:
        ag, dt = self.agent, self.dtype
        hp = ag.hp
        a_lr, a_eps, a_flush = _adam_scalars(ag.actor_opt, dt)
        c_lr, c_eps, c_flush = _adam_scalars(ag.critic_opt, dt)
        code, loss, objective = ddpg_update(
            np.ascontiguousarray(batch.states, dtype=dt), np.ascontiguousarray(batch.actions, dtype=dt),
            np.ascontiguousarray(batch.rewards, dtype=dt), np.ascontiguousarray(batch.next_states, dtype=dt),
            self.hidden, dt(hp.gamma), dt(hp.tau), dt(U_MIN),
            ag.actor.flat, ag.actor_target.flat, ag.critic.flat, ag.critic_target.flat, self.a_off, self.c_off,
            ag.actor_opt.m, ag.actor_opt.v, a_lr, a_eps, a_flush,
            ag.critic_opt.m, ag.critic_opt.v, c_lr, c_eps, c_flush,
            dt(ag.critic_opt.beta1), dt(ag.critic_opt.beta2), dt(nn.FLUSH_BELOW),
        )
        if code == ERR_NONFINITE_CRITIC:
            raise FloatingPointError(f"non-finite gradient in critic network (t={ag.critic_opt.t}); aborting update")
        ag.critic_opt.t += 1
        if code == ERR_NONFINITE_ACTOR:
            raise FloatingPointError(f"non-finite gradient in actor network (t={ag.actor_opt.t}); aborting update")
        ag.actor_opt.t += 1
        return float(loss), float(objective)

    def greedy(self, s: np.ndarray) -> tuple[int, float]:
        d, u = actor_greedy(self.agent.actor.flat, self.a_off, s.astype(self.dtype), self.hidden,
                            self.dtype(U_MIN))
        return int(d), float(u)

