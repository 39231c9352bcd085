"""Retrieval-augmented classification of sensitive documents.

The heavy lifting lives in the native ``rac._core`` module; this package turns
its JSON payloads into Python objects.
"""

import json as _json

from . import _core
from ._core import RacError, format_p_value

__all__ = [
    "Classifier",
    "RacError",
    "ServiceError",
    "bootstrap_ci",
    "cli",
    "default_config",
    "fixture_corpus",
    "format_p_value",
    "load_config",
    "metrics",
    "permutation_test",
    "validate_config",
]


class ServiceError(RuntimeError):
    """A non-2xx answer from a Classifier call. ``payload`` holds the error body."""

    def __init__(self, status, payload):
        err = payload.get("error", {})
        super().__init__(f"{status} {err.get('code')}: {err.get('message')}")
        self.status = status
        self.payload = payload


def default_config():
    return _json.loads(_core.default_config())


def load_config(path):
    return _json.loads(_core.load_config(str(path)))


def validate_config(config):
    """Returns the normalized config or raises RacError."""
    return _json.loads(_core.validate_config(_json.dumps(config)))


def cli(*args):
    """Runs the command line in-process; returns (exit_code, stdout, stderr)."""
    return _core.cli([str(a) for a in args])


def fixture_corpus(train_per_class=20, test_per_class=10, seed=7):
    text = _core.fixture_corpus(train_per_class, test_per_class, seed)
    return [_json.loads(line) for line in text.splitlines() if line.strip()]


def metrics(gold, pred):
    """Accuracy, per-class and macro F1. ``None`` in ``pred`` counts as an error."""
    return _json.loads(_core.metrics(list(gold), list(pred)))


def bootstrap_ci(gold, pred, resamples=2000, level=0.95, seed=0):
    return _json.loads(_core.bootstrap_ci(list(gold), list(pred), resamples, level, seed))


def permutation_test(gold, pred_a, pred_b, permutations=10000, seed=0):
    return _json.loads(_core.permutation_test(list(gold), list(pred_a), list(pred_b), permutations, seed))


class Classifier:
    """In-process equivalent of the HTTP service."""

    def __init__(self, config=None, index_path=None):
        cfg = None if config is None else _json.dumps(config)
        self._impl = _core.Classifier(cfg, None if index_path is None else str(index_path))

    @staticmethod
    def _unwrap(result):
        status, body = result
        payload = _json.loads(body)
        if status >= 400:
            raise ServiceError(status, payload)
        return payload

    def classify(self, text, mode="rac", shots=None, **fields):
        request = dict(fields, text=text, mode=mode)
        if shots is not None:
            request["shots"] = shots
        return self._unwrap(self._impl.classify(_json.dumps(request)))

    def add_document(self, document):
        return self._unwrap(self._impl.add_document(_json.dumps(document)))

    def reindex(self):
        return self._unwrap(self._impl.reindex())

    def health(self):
        return self._unwrap(self._impl.health())

    def trace(self, trace_id):
        return self._unwrap(self._impl.trace(trace_id))
