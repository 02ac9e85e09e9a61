"""RGB-thermal segmentation with text-conditioned transformer fusion, built on a small numpy autodiff core."""

__version__ = "0.1.0"
