"""Mode counting for univariate densities: KDE-guided compositional splines with Bayesian model selection."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"
