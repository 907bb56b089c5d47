"""Synthetic three-directional myocardial velocity mapping.

Temporal interpolation of magnitude CINE frames and masks, phase synthesis
with foreground/background compositing, and global velocity assessment,
checked against an analytic beating-annulus phantom.
"""
from .core import CineStudy, DownsampleSpec, StudyMeta, load_study, save_study
from .phantom import PhantomParams, generate_phantom

__all__ = ["CineStudy", "DownsampleSpec", "StudyMeta", "load_study", "save_study",
           "PhantomParams", "generate_phantom"]
__version__ = "0.1.0"
