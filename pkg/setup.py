from importlib.machinery import SourceFileLoader
from os.path import exists

from setuptools import find_packages, setup

version = SourceFileLoader("gmclab.version", "gmclab/version.py").load_module().version

packages = find_packages(exclude=["tests", "tests.*"])
if exists("README.md"):
    with open("README.md", "r", encoding="UTF-8") as fh:
        LONG_DESC = fh.read()
else:
    LONG_DESC = ""

setup(
    name="gmclab",
    version=version,
    description="Simulation lab for log-correlated Gaussian fields, their chaos "
    "measures and extremal clusters",
    long_description=LONG_DESC,
    long_description_content_type="text/markdown",
    package_data={"gmclab": ["bin/conf/*/*.yaml"]},
    packages=packages,
    include_package_data=True,
    install_requires=[
        "numpy",
        "scipy >= 1.6.0",
        "hydra-core >= 1.1.0",
        "hydra_colorlog >= 1.1.0",
        "omegaconf",
        "joblib",
        "tqdm",
    ],
    extras_require={
        "docs": [
            "sphinx",
            "sphinx-autobuild",
            "sphinx_rtd_theme",
            "Jinja2>=3.0.1",
        ],
        "lint": [
            "pysen",
            "types-setuptools",
            "mypy<=0.910",
            "black>=19.19b0,<=20.8",
            "flake8>=3.7,<4",
            "flake8-bugbear",
            "isort>=4.3,<5.2.0",
            "click<8.1.0",
        ],
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": [
            "gmclab = gmclab.bin.cli:entry",
            "gmclab-kernel = gmclab.bin.kernel:entry",
            "gmclab-sample-field = gmclab.bin.sample_field:entry",
            "gmclab-gmc = gmclab.bin.gmc:entry",
            "gmclab-atoms = gmclab.bin.atoms:entry",
            "gmclab-cluster = gmclab.bin.cluster:entry",
            "gmclab-bridge = gmclab.bin.bridge:entry",
            "gmclab-verify = gmclab.bin.verify:entry",
        ],
    },
)
