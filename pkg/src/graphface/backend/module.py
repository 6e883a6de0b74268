"""Minimal parameter-container base for layers and networks."""
import numpy as np

from .tensor import Parameter


class Module:
    """Holds Parameters and child Modules in attributes (or lists of them).

    Traversal follows attribute insertion order, so parameter ordering is
    deterministic for a given construction sequence.
    """

    def _children(self):
        for attr, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield attr, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{attr}.{i}", item

    def named_parameters(self, prefix=""):
        for attr, value in self._children():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        """Stamp each parameter with its path; names are unique per tree."""
        for path, p in self.named_parameters(prefix):
            p.name = path
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: stored shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


def uniform_init(rng, shape, fan_in, dtype):
    """Fan-in-scaled uniform init: bound = sqrt(1 / fan_in)."""
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
