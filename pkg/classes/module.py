from abc import ABC, abstractmethod

import numpy as np

from utils.errors import ShapeMismatchError
from utils.tensor import Tensor


class Module(ABC):
    """Parameter container.
    Tensor attributes are parameters; Module attributes and lists of Modules are children.
    Names follow attribute order, e.g. 'stages.0.blocks.1.local_pw.weight'.
    """

    @abstractmethod
    def forward(self, *args):
        pass

    def __call__(self, *args):
        return self.forward(*args)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = []
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                named.append((name, value))
            elif isinstance(value, Module):
                named.extend(value.named_parameters(f"{name}."))
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for idx, child in enumerate(value):
                    named.extend(child.named_parameters(f"{name}.{idx}."))
        return named

    def parameters(self) -> list[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        mismatched = sorted(name for name in set(own) & set(state) if own[name].shape != tuple(state[name].shape))
        if missing or unexpected or mismatched:
            problems = []
            if mismatched:
                problems.append("shape mismatch: " + ", ".join(
                    f"{name} {tuple(state[name].shape)} vs {own[name].shape}" for name in mismatched))
            if missing:
                problems.append("missing: " + ", ".join(missing))
            if unexpected:
                problems.append("unexpected: " + ", ".join(unexpected))
            raise ShapeMismatchError("load_state_dict", "; ".join(problems))
        for name, tensor in own.items():
            tensor.data = np.array(state[name], dtype=tensor.dtype)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def constant_init(shape: tuple, value: float, dtype) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)
