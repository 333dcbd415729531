"""Multicast group construction: DDQN picks the group count, K-means++ clusters.

Tie-breaking everywhere goes to the smallest index (or smallest K) so that a
seed fully determines assignments and training trajectories.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import as_float_array, check_generator
from .encoder import _read_params, _unpack, _write_params
from .exceptions import BadK, EmptyBatch, FormatVersionMismatch, TooFewUsers

STATE_DIM = 5


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def pairwise_stats(features):
    """Mean and population std of Euclidean distances over all unordered pairs."""
    X = as_float_array(features, 2, "features")
    n = X.shape[0]
    if n < 2:
        raise TooFewUsers(f"need at least 2 feature vectors, got {n}")
    i, j = np.triu_indices(n, k=1)
    d = np.sqrt(((X[i] - X[j]) ** 2).sum(axis=1))
    return float(d.mean()), float(d.std())


def total_ss(X):
    return float(((X - X.mean(axis=0)) ** 2).sum())


def kmeanspp_seed(features, K, rng=None, return_indices=False):
    """D^2 seeding.

    The first centre is uniform; each later centre is drawn with probability
    proportional to the squared distance to the nearest chosen centre.  If that
    mass is zero (duplicates), the lowest-index unchosen point is taken.
    """
    X = as_float_array(features, 2, "features")
    n = X.shape[0]
    if not 1 <= K <= n:
        raise BadK(f"K must be in [1, {n}], got {K}")
    rng = check_generator(rng)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        mass = d2.sum()
        if mass > 0:
            idx = int(rng.choice(n, p=d2 / mass))
        else:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    centroids = X[chosen].copy()
    return (centroids, chosen) if return_indices else centroids


@dataclass
class GroupAssignment:
    K: int
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    history: list = field(default_factory=list)
    total_ss: float = float("nan")

    def members(self, g):
        return np.flatnonzero(self.labels == g)


def _assign(X, C):
    d2 = _sq_dists(X, C)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(X)), labels]


def _repair_empty(X, C, labels, K):
    """Give every empty cluster the point farthest from its current centroid."""
    for g in range(K):
        if np.any(labels == g):
            continue
        counts = np.bincount(labels, minlength=K)
        dist = ((X - C[labels]) ** 2).sum(axis=1)
        dist[counts[labels] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(dist))
        labels[far] = g
        C[g] = X[far]
    return labels


def _wcss(X, C, labels):
    return float(((X - C[labels]) ** 2).sum())


def lloyd(features, centroids, tol=1e-9, max_iter=100):
    """Lloyd iterations from the given centroids.

    Nearest-centroid ties go to the lowest group index, empty clusters are
    reseeded with the farthest point, and iteration stops once the WCSS
    improvement drops below ``tol``.  ``history`` holds the WCSS after each
    iteration and is non-increasing.
    """
    X = as_float_array(features, 2, "features")
    C = as_float_array(centroids, 2, "centroids").copy()
    if C.shape[1] != X.shape[1]:
        raise BadK("centroid dimension differs from feature dimension")
    K = C.shape[0]
    if not 1 <= K <= X.shape[0]:
        raise BadK(f"K must be in [1, {X.shape[0]}], got {K}")
    if tol < 0 or max_iter < 1:
        raise ValueError("need tol >= 0 and max_iter >= 1")
    history = []
    labels = None
    for _ in range(max_iter):
        labels, _ = _assign(X, C)
        labels = _repair_empty(X, C, labels, K)
        C = np.array([X[labels == g].mean(axis=0) for g in range(K)])
        history.append(_wcss(X, C, labels))
        if len(history) > 1 and history[-2] - history[-1] < tol:
            break
    return GroupAssignment(K, labels, C, history[-1], history, total_ss(X))


def construct_groups(features, K, rng=None, tol=1e-9, max_iter=100):
    """K-means++ seeding followed by Lloyd iterations."""
    X = as_float_array(features, 2, "features")
    rng = check_generator(rng)
    return lloyd(X, kmeanspp_seed(X, K, rng), tol, max_iter)


def cluster_reward(assignment, K, lam=0.1, k_max=8, X=None):
    """Compactness reward ``-WCSS/TSS - lam*K/k_max``.

    When the total sum of squares is zero (all users identical) the
    compactness term is dropped.
    """
    tss = total_ss(np.asarray(X, dtype=np.float64)) if X is not None else assignment.total_ss
    if tss <= 0:
        return -lam * K / k_max
    return -assignment.wcss / tss - lam * K / k_max


def cluster_state(features, n_max, prev_wcss_ratio, prev_k, k_max):
    """5-d DDQN state: user count, distance mean/std, previous WCSS ratio and K.

    Distance statistics are divided by the RMS pairwise distance, which makes
    the state invariant to the feature scale (as K-means itself is) and keeps
    every entry in [0, 1].
    """
    X = as_float_array(features, 2, "features")
    n = X.shape[0]
    mean = std = 0.0
    if n >= 2:
        rms = np.sqrt(2.0 * total_ss(X) / (n - 1))
        if rms > 0:
            mean, std = pairwise_stats(X)
            mean, std = min(mean / rms, 1.0), min(std / rms, 1.0)
    return np.array(
        [min(n / n_max, 1.0), mean, std, float(np.clip(prev_wcss_ratio, 0, 1)), prev_k / k_max]
    )


# --------------------------------------------------------------------- DDQN


@dataclass
class QNetwork:
    W1: np.ndarray  # (H, 5)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (|A|, H)
    b2: np.ndarray  # (|A|,)
    k_min: int = 1
    k_max: int = 8

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise BadK(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        H = self.W1.shape[0]
        n_actions = self.k_max - self.k_min + 1
        if self.W1.shape != (H, STATE_DIM) or self.b1.shape != (H,) or H < 1:
            raise ValueError("hidden layer shapes are inconsistent")
        if self.W2.shape != (n_actions, H) or self.b2.shape != (n_actions,):
            raise ValueError("output layer shapes are inconsistent")

    @classmethod
    def init(cls, hidden=32, k_min=1, k_max=8, rng=None):
        rng = check_generator(rng)
        n_actions = k_max - k_min + 1
        b1, b2 = 1 / np.sqrt(STATE_DIM), 1 / np.sqrt(hidden)
        return cls(
            rng.uniform(-b1, b1, (hidden, STATE_DIM)), np.zeros(hidden),
            rng.uniform(-b2, b2, (n_actions, hidden)), np.zeros(n_actions),
            k_min, k_max,
        )

    @property
    def n_actions(self):
        return self.k_max - self.k_min + 1

    @property
    def hidden(self):
        return self.W1.shape[0]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self):
        return QNetwork(*(p.copy() for p in self.params()), self.k_min, self.k_max)

    def load_from(self, other):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src


def q_forward(net, state):
    """Q-values for one state (or a batch of states, one per row)."""
    s = np.asarray(state, dtype=np.float64)
    h = np.maximum(s @ net.W1.T + net.b1, 0.0)
    return h @ net.W2.T + net.b2


def select_k(net, state, epsilon, rng, n_users=None):
    """Epsilon-greedy K; greedy ties go to the smallest K.

    One uniform draw is always consumed so the rng stream does not depend on
    the branch taken.  ``n_users`` caps K when fewer users than k_max exist.
    """
    rng = check_generator(rng)
    explore = rng.random() < epsilon
    if explore:
        a = int(rng.integers(net.n_actions))
    else:
        a = int(np.argmax(q_forward(net, state)))
    k = net.k_min + a
    if n_users is not None:
        k = max(1, min(k, n_users))
    return k


class Transition(NamedTuple):
    state: np.ndarray
    action: int  # index into the action set, i.e. K - k_min
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    def __init__(self, capacity=4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buffer = deque(maxlen=capacity)

    def push(self, transition):
        self.buffer.append(transition)

    def __len__(self):
        return len(self.buffer)

    def sample(self, batch_size, rng):
        idx = rng.choice(len(self.buffer), size=min(batch_size, len(self.buffer)), replace=False)
        return [self.buffer[i] for i in idx]


def double_q_targets(online, target, batch, gamma):
    """y = r for terminal transitions, else r + gamma * Q_target(s', argmax_a Q_online(s', a))."""
    if len(batch) == 0:
        raise EmptyBatch("empty batch")
    S2 = np.array([t.next_state for t in batch])
    r = np.array([t.reward for t in batch], dtype=np.float64)
    done = np.array([t.done for t in batch], dtype=bool)
    a_star = np.argmax(q_forward(online, S2), axis=1)
    q_next = q_forward(target, S2)[np.arange(len(batch)), a_star]
    return np.where(done, r, r + gamma * q_next)


def ddqn_update(online, target, batch, gamma=0.9, lr=0.01):
    """One SGD step of the online net on the mean squared double-Q TD error.

    Returns the loss before the step.
    """
    if len(batch) == 0:
        raise EmptyBatch("empty batch")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    y = double_q_targets(online, target, batch, gamma)
    S = np.array([t.state for t in batch])
    a = np.array([t.action for t in batch])
    B = len(batch)
    pre = S @ online.W1.T + online.b1
    h = np.maximum(pre, 0.0)
    q = h @ online.W2.T + online.b2
    q_sa = q[np.arange(B), a]
    loss = float(np.mean((q_sa - y) ** 2))

    dq = np.zeros_like(q)
    dq[np.arange(B), a] = 2.0 * (q_sa - y) / B
    dW2 = dq.T @ h
    db2 = dq.sum(axis=0)
    dh = (dq @ online.W2) * (pre > 0)
    dW1 = dh.T @ S
    db1 = dh.sum(axis=0)
    for p, g in zip(online.params(), (dW1, db1, dW2, db2)):
        p -= lr * g
    return loss


def sync_target(online, target, counter, period):
    """Hard-copy online weights into ``target`` every ``period`` updates."""
    if counter % period == 0:
        target.load_from(online)
    return target


def save_qnetwork(net, path):
    _write_params(path, f"DDQN v1 {net.hidden} {net.k_min} {net.k_max}", net.params())


def load_qnetwork(path):
    dims, values = _read_params(path, "DDQN")
    if len(dims) != 3:
        raise FormatVersionMismatch(f"{path}: header needs H K_min K_max")
    H, k_min, k_max = dims
    n_a = k_max - k_min + 1
    W1, b1, W2, b2 = _unpack(values, [(H, STATE_DIM), (H,), (n_a, H), (n_a,)], path)
    return QNetwork(W1, b1, W2, b2, k_min, k_max)


def epsilon_at(step, total_steps, start=1.0, end=0.05, decay_fraction=0.8):
    """Linear decay from ``start`` to ``end`` over the first ``decay_fraction`` of steps."""
    horizon = max(1.0, decay_fraction * total_steps)
    frac = min(1.0, step / horizon)
    return start + (end - start) * frac


class GroupCountAgent(BaseEstimator):
    """Double deep Q-learning agent whose actions are group counts K.

    ``fit(env)`` runs ε-greedy episodes against a clustering environment
    exposing ``reset(episode) -> state`` and ``step(K) -> (state, reward, done)``;
    ``predict(states)`` returns greedy K per state row.
    """

    def __init__(self, k_min=1, k_max=8, hidden=32, gamma=0.9, lr=0.01, eps_start=1.0,
                 eps_end=0.05, eps_decay_fraction=0.8, replay_capacity=4096, batch_size=32,
                 sync_period=64, n_episodes=200, random_state=0):
        self.k_min = k_min
        self.k_max = k_max
        self.hidden = hidden
        self.gamma = gamma
        self.lr = lr
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_fraction = eps_decay_fraction
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.sync_period = sync_period
        self.n_episodes = n_episodes
        self.random_state = random_state

    def _init_state(self):
        self.rng_ = np.random.default_rng(self.random_state)
        self.online_ = QNetwork.init(self.hidden, self.k_min, self.k_max, self.rng_)
        self.target_ = self.online_.copy()
        self.replay_ = ReplayBuffer(self.replay_capacity)
        self.n_updates_ = 0
        self.n_steps_ = 0
        self.losses_ = []
        self.episode_rewards_ = []

    def start(self, total_steps):
        """Prepare for online training over ``total_steps`` decisions."""
        self._init_state()
        self.total_steps_ = total_steps
        return self

    def act(self, state, n_users=None, greedy=False):
        eps = 0.0 if greedy else epsilon_at(
            self.n_steps_, self.total_steps_, self.eps_start, self.eps_end, self.eps_decay_fraction
        )
        return select_k(self.online_, state, eps, self.rng_, n_users)

    def observe(self, state, k, reward, next_state, done):
        """Store one transition and run one DDQN update once a batch is available."""
        self.replay_.push(Transition(np.asarray(state), k - self.k_min, float(reward),
                                     np.asarray(next_state), bool(done)))
        self.n_steps_ += 1
        if len(self.replay_) >= self.batch_size:
            batch = self.replay_.sample(self.batch_size, self.rng_)
            self.losses_.append(ddqn_update(self.online_, self.target_, batch, self.gamma, self.lr))
            self.n_updates_ += 1
            sync_target(self.online_, self.target_, self.n_updates_, self.sync_period)

    def fit(self, env, y=None):
        steps = self.n_episodes * env.episode_length
        self.start(steps)
        for ep in range(self.n_episodes):
            state = env.reset(ep)
            total, done = 0.0, False
            while not done:
                k = self.act(state, env.n_users)
                next_state, reward, done = env.step(k)
                self.observe(state, k, reward, next_state, done)
                total += reward
                state = next_state
            self.episode_rewards_.append(total)
        return self

    def predict(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        q = q_forward(self.online_, states)
        return self.k_min + np.argmax(q, axis=1)

    @classmethod
    def from_network(cls, net, **kwargs):
        agent = cls(k_min=net.k_min, k_max=net.k_max, hidden=net.hidden, **kwargs)
        agent.start(1)
        agent.online_ = net
        agent.target_ = net.copy()
        return agent


class ClusteringEnv:
    """Decision process over a sequence of feature sets.

    One step clusters the current features with the chosen K (best of
    ``n_init`` K-means++ runs), pays ``cluster_reward`` and moves to the next
    feature set.  ``feature_source(episode, step, rng)`` supplies the data.
    """

    def __init__(self, feature_source, episode_length, n_max, k_max=8, lam=0.1, n_init=3,
                 seed=0):
        self.feature_source = feature_source
        self.episode_length = episode_length
        self.n_max = n_max
        self.k_max = k_max
        self.lam = lam
        self.n_init = n_init
        self.seed = seed

    def reset(self, episode):
        self.rng = np.random.default_rng([self.seed, episode])
        self.episode = episode
        self.t = 0
        self.prev_ratio, self.prev_k = 1.0, 1
        self.X = self.feature_source(episode, 0, self.rng)
        self.n_users = len(self.X)
        return self.state()

    def state(self):
        return cluster_state(self.X, self.n_max, self.prev_ratio, self.prev_k, self.k_max)

    def step(self, k):
        k = min(k, len(self.X))
        best = best_of(self.X, k, self.n_init, self.rng)
        reward = cluster_reward(best, k, self.lam, self.k_max, X=self.X)
        tss = total_ss(self.X)
        self.prev_ratio = best.wcss / tss if tss > 0 else 0.0
        self.prev_k = k
        self.t += 1
        done = self.t >= self.episode_length
        if not done:
            self.X = self.feature_source(self.episode, self.t, self.rng)
            self.n_users = len(self.X)
        return self.state(), reward, done


def best_of(X, K, n_init, rng):
    """Lowest-WCSS assignment over ``n_init`` seeded K-means++ runs (first wins ties)."""
    best = None
    for _ in range(n_init):
        a = construct_groups(X, K, rng)
        if best is None or a.wcss < best.wcss:
            best = a
    return best


class KMeansPP(ClusterMixin, BaseEstimator):
    """K-means++ seeding + Lloyd, best of ``n_init`` runs."""

    def __init__(self, n_clusters=2, n_init=10, tol=1e-9, max_iter=100, random_state=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_float_array(X, 2, "X")
        rng = check_generator(self.random_state)
        best = None
        for _ in range(self.n_init):
            a = lloyd(X, kmeanspp_seed(X, self.n_clusters, rng), self.tol, self.max_iter)
            if best is None or a.wcss < best.wcss:
                best = a
        self.assignment_ = best
        self.labels_ = best.labels
        self.cluster_centers_ = best.centroids
        self.inertia_ = best.wcss
        return self

    def predict(self, X):
        X = as_float_array(X, 2, "X")
        return _assign(X, self.cluster_centers_)[0]


BLOB_CENTERS = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 8.66]])


def blob_features(episode, step, rng, centers=BLOB_CENTERS, n_range=(18, 30), spread=0.5,
                  jitter=1.0):
    """Well-separated Gaussian blobs, one per row of ``centers`` (known best K)."""
    c = np.asarray(centers, dtype=np.float64)
    c = c + rng.normal(0.0, jitter, c.shape)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    labels = np.arange(n) % len(c)
    return c[labels] + rng.normal(0.0, spread, (n, c.shape[1]))


def greedy_first_choices(agent, env, n_episodes=100):
    """Greedy K on the opening state of each of ``n_episodes`` fresh episodes."""
    return np.array([agent.act(env.reset(ep), n_users=env.n_users, greedy=True)
                     for ep in range(n_episodes)])
