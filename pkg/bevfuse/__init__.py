"""Fisheye camera and ultrasonic fusion for BEV obstacle perception"""

__version__ = "1.0.0"
