"""Estimator plumbing: scikit-learn compatible parameter handling.

Estimators in this package follow the sklearn convention without importing
sklearn: constructor arguments are hyper-parameters stored verbatim,
``get_params``/``set_params`` expose them, and attributes learned by ``fit``
carry a trailing underscore.  ``sklearn.base.clone`` and pipeline composition
work through duck typing.
"""

import inspect


class ParamsMixin:
    """get_params/set_params over the constructor signature, sklearn-style."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return sorted(
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        )

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def check_fitted(estimator, attributes):
    """Raise if any of the given fitted attributes is missing."""
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise ValueError(
            f"{type(estimator).__name__} is not fitted (missing {missing})"
        )
