"""
Proxy Anomaly Backend Setup
"""

from setuptools import setup, find_packages

with open("requirements.txt") as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith("#")]

setup(
    name="proxy-anomaly-backend",
    version="1.0.0",
    description="Proxy-bridged image anomaly detection: superpixel proxies, memory bank, repairing losses",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    py_modules=["cli", "app"],
    install_requires=requirements,
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "proxyad=cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Framework :: Flask",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Image Processing",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
    ],
    keywords="anomaly-detection, superpixel, slic, memory-bank, autoencoder, gan, flask",
)
