"""Joint STAR-RIS beamforming, UAV trajectory and NOMA power optimization."""

__version__ = "0.1.0"
