"""Named parameter tensors, Adam, and the checkpoint format.

Checkpoint = JSON manifest (tensor names, shapes, dtype, format version)
next to a raw little-endian float32 blob in manifest order.
"""

import json
import os

import numpy as np

from .autodiff import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class ParamSet:
    """Flat named-tensor container for network weights."""

    def __init__(self, tensors=None, version=0):
        self.tensors = dict(tensors or {})
        self.version = version
        for name, arr in self.tensors.items():
            self.tensors[name] = np.asarray(arr, dtype=np.float32)

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def add(self, name, arr):
        if name in self.tensors:
            raise ValueError("duplicate tensor name: %r" % name)
        self.tensors[name] = np.asarray(arr, dtype=np.float32)

    def names(self):
        return list(self.tensors.keys())

    def check(self):
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite values in tensor %r" % name)

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self.tensors.items()},
                        version=self.version)

    def as_tensors(self):
        """Differentiable leaves, one per tensor, sharing names."""
        return {k: Tensor(v, requires_grad=True)
                for k, v in self.tensors.items()}

    # -- checkpoint I/O ------------------------------------------------

    def save(self, path):
        """Write `<path>.json` manifest and `<path>.bin` blob."""
        names = sorted(self.tensors.keys())
        manifest = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "dtype": "<f4",
            "version": self.version,
            "tensors": [{"name": n, "shape": list(self.tensors[n].shape)}
                        for n in names],
        }
        with open(path + ".json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        with open(path + ".bin", "wb") as f:
            for n in names:
                f.write(self.tensors[n].astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path + ".json") as f:
            manifest = json.load(f)
        if manifest["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError("unsupported checkpoint format version %r"
                             % manifest["format_version"])
        blob = np.fromfile(path + ".bin", dtype="<f4")
        tensors = {}
        off = 0
        for entry in manifest["tensors"]:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            tensors[entry["name"]] = blob[off:off + n].reshape(entry["shape"])
            off += n
        if off != blob.size:
            raise ValueError("checkpoint blob size mismatch")
        return cls(tensors, version=manifest.get("version", 0))

    @staticmethod
    def exists(path):
        return os.path.exists(path + ".json") and os.path.exists(path + ".bin")


def backprop(loss, leaves):
    """Run the recorded backward pass; gradients keyed like the ParamSet.

    `leaves` is the dict returned by ParamSet.as_tensors() used in the
    forward computation of the scalar `loss`.
    """
    if loss.data.size != 1:
        raise ValueError("loss must be scalar")
    loss.backward()
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in leaves.items()}


class OptimizerState:
    """Adam accumulators mirroring a ParamSet."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or eps <= 0:
            raise ValueError("lr and eps must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros(v.shape, np.float64)
                  for k, v in params.tensors.items()}
        self.v = {k: np.zeros(v.shape, np.float64)
                  for k, v in params.tensors.items()}


def adam_step(params, grads, opt):
    """Bias-corrected Adam update, in place on `params`."""
    if set(grads) != set(params.tensors) or set(opt.m) != set(params.tensors):
        raise ValueError("param/grad/state key sets differ")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient for tensor %r"
                                     % name)
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    for name, g in grads.items():
        opt.m[name] = opt.beta1 * opt.m[name] + (1 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1 - opt.beta2) * g * g
        mhat = opt.m[name] / bc1
        vhat = opt.v[name] / bc2
        params.tensors[name] -= (opt.lr * mhat /
                                 (np.sqrt(vhat) + opt.eps)).astype(np.float32)
    params.version += 1
    return params, opt
