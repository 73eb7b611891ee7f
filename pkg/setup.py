"""
Setup script for the coorp-adp project
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read README
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text() if readme_file.exists() else ""

setup(
    name="coorp-adp",
    version="0.1.0",
    description="Data-driven cooperative optimal output regulation with adaptive observers",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="nthmost",
    python_requires=">=3.10",
    packages=find_packages(exclude=["tests", "configs"]),
    install_requires=[
        "numpy>=2.0",
        "scipy>=1.11",
        "pandas>=2.2",
        "python-dotenv>=1.0.0",
        "pydantic>=2.6",
        "toml>=0.10.2",
        "rich>=13.0",
    ],
    extras_require={
        "dev": [
            "pytest>=8.3.4",
            "pytest-mock",
            "pytest-cov",
        ],
    },
    entry_points={
        "console_scripts": [
            "coorp-adp=coorp_adp.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3.11",
    ],
)
