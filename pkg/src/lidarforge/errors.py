"""Exception types shared across the package."""


class LidarForgeError(Exception):
    """Base class for all package errors."""


class FormatError(LidarForgeError, ValueError):
    """A file or byte stream does not match its declared layout."""


class ValidationError(LidarForgeError, ValueError):
    """An in-memory value violates a documented invariant or precondition."""


class UnknownCategoryError(LidarForgeError, KeyError):
    """A requested object category is not present in the catalog."""

    def __init__(self, category, known):
        self.category = category
        self.known = sorted(known)
        super().__init__(
            f"unknown category {category!r}; known categories: {', '.join(self.known)}"
        )

    def __str__(self):
        return self.args[0]


class PlacementInfeasibleError(LidarForgeError):
    """No valid insertion site could be found for an object."""


class UndefinedMetricError(LidarForgeError, ValueError):
    """A metric has no defined value for the given inputs."""
