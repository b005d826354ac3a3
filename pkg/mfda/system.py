#!/usr/bin/env python3
"""Runtime detection: interpreter, numerical libraries and available cores."""

import os
import platform
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version


def package_version(name: str) -> str | None:
    """Installed distribution version, or None."""
    try:
        return version(name)
    except PackageNotFoundError:
        return None


def cpu_count() -> int:
    """Cores this process may use."""
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return max(1, os.cpu_count() or 1)


def has_cholmod() -> bool:
    """Check whether the optional CHOLMOD backend is importable."""
    try:
        import sksparse.cholmod  # noqa: F401
    except ImportError:
        return False
    return True


@dataclass
class SystemInfo:
    """Runtime information shown by --version and recorded with results."""

    python_version: str = field(default_factory=platform.python_version)
    numpy_version: str | None = field(default_factory=lambda: package_version("numpy"))
    scipy_version: str | None = field(default_factory=lambda: package_version("scipy"))
    joblib_version: str | None = field(default_factory=lambda: package_version("joblib"))
    cholmod: bool = field(default_factory=has_cholmod)
    cpus: int = field(default_factory=cpu_count)
    hostname: str = field(default_factory=platform.node)
    arch: str = field(default_factory=platform.machine)

    def default_workers(self, requested: int | None = None) -> int:
        """Worker count: the request capped at the core count."""
        if requested is None:
            return self.cpus
        return max(1, min(requested, self.cpus))

    @property
    def poisson_backend(self) -> str:
        return "cholmod" if self.cholmod else "superlu"

    def as_dict(self) -> dict[str, object]:
        return {
            "python": self.python_version,
            "numpy": self.numpy_version or "not installed",
            "scipy": self.scipy_version or "not installed",
            "joblib": self.joblib_version or "not installed",
            "poisson_backend": self.poisson_backend,
            "cpus": self.cpus,
            "hostname": self.hostname,
            "arch": self.arch,
        }
