"""Transition storage: growable real-data store, ring buffer for synthetic.

One JSON object per line on disk:
{"x": [..], "u": [..], "x_next": [..], "r": f, "feasible": b, "done": b,
 "t": i, "episode": i}
"""

import json
from typing import Optional

import numpy as np

from tubecert import models


class TransitionDataset:
    """Columnar transition records; bounded ring when capacity is given."""

    def __init__(self, n_x: int, n_u: int, capacity: Optional[int] = None):
        self.n_x = n_x
        self.n_u = n_u
        self.capacity = capacity
        size = capacity if capacity is not None else 1024
        self._alloc(size)
        self._n = 0
        self._write = 0

    def _alloc(self, size):
        self._x = np.zeros((size, self.n_x))
        self._u = np.zeros((size, self.n_u))
        self._xn = np.zeros((size, self.n_x))
        self._r = np.zeros(size)
        self._feasible = np.zeros(size, dtype=bool)
        self._done = np.zeros(size, dtype=bool)
        self._t = np.zeros(size, dtype=int)
        self._episode = np.zeros(size, dtype=int)

    def _grow(self):
        old = (self._x, self._u, self._xn, self._r, self._feasible,
               self._done, self._t, self._episode)
        self._alloc(2 * old[0].shape[0])
        for buf, prev in zip((self._x, self._u, self._xn, self._r, self._feasible,
                              self._done, self._t, self._episode), old):
            buf[: prev.shape[0]] = prev

    def append(self, x, u, x_next, r, feasible, done, t=0, episode=0):
        if self.capacity is None and self._n == self._x.shape[0]:
            self._grow()
        i = self._write
        self._x[i] = x
        self._u[i] = u
        self._xn[i] = x_next
        self._r[i] = r
        self._feasible[i] = feasible
        self._done[i] = done
        self._t[i] = t
        self._episode[i] = episode
        if self.capacity is not None:
            self._write = (i + 1) % self.capacity
            self._n = min(self._n + 1, self.capacity)
        else:
            self._write = i + 1
            self._n = i + 1

    def __len__(self):
        return self._n

    @property
    def x(self):
        return self._x[: self._n]

    @property
    def u(self):
        return self._u[: self._n]

    @property
    def x_next(self):
        return self._xn[: self._n]

    @property
    def r(self):
        return self._r[: self._n]

    @property
    def feasible(self):
        return self._feasible[: self._n]

    @property
    def done(self):
        return self._done[: self._n]

    @property
    def t(self):
        return self._t[: self._n]

    @property
    def episode(self):
        return self._episode[: self._n]

    def to_batch(self) -> models.TransitionBatch:
        return models.TransitionBatch(self.x.copy(), self.u.copy(), self.x_next.copy())

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for i in range(self._n):
                fh.write(json.dumps({
                    "x": self._x[i].tolist(),
                    "u": self._u[i].tolist(),
                    "x_next": self._xn[i].tolist(),
                    "r": float(self._r[i]),
                    "feasible": bool(self._feasible[i]),
                    "done": bool(self._done[i]),
                    "t": int(self._t[i]),
                    "episode": int(self._episode[i]),
                }) + "\n")

    @classmethod
    def load_jsonl(cls, path, capacity: Optional[int] = None) -> "TransitionDataset":
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        if not rows:
            raise ValueError(f"no transitions in {path}")
        ds = cls(len(rows[0]["x"]), len(rows[0]["u"]), capacity=capacity)
        for rec in rows:
            ds.append(rec["x"], rec["u"], rec["x_next"], rec["r"],
                      rec["feasible"], rec["done"], rec.get("t", 0),
                      rec.get("episode", 0))
        return ds
