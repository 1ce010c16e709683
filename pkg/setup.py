"""Set up the mgrl package."""
import json
from pathlib import Path

from setuptools import find_packages, setup

DESCRIPTION = (
    "Multi-goal reinforcement learning lab with exact oracles for "
    "goal relabelling and Dirac-reward learners"
)

REQUIREMENTS = [
    "msgpack>=1.0.2",
    "numpy>=1.19",
    "pydantic>=1.10,<2",
    "python-dotenv>=0.17.0",
    "pyyaml",
    "shortuuid>=1.0.1",
]

ROOT_DIR = Path(__file__).parent.resolve()
README_FILE = ROOT_DIR / "README.md"
LONG_DESCRIPTION = README_FILE.read_text(encoding="utf-8")
VERSION_FILE = ROOT_DIR / "mgrl" / "VERSION"
VERSION = json.loads(VERSION_FILE.read_text(encoding="utf-8"))["version"]


setup(
    name="mgrl",
    version=VERSION,
    description=DESCRIPTION,
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    license="MIT",
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.8",
    include_package_data=True,
    package_data={"mgrl": ["VERSION"]},
    install_requires=REQUIREMENTS,
    zip_safe=False,
    entry_points={"console_scripts": ["mgrl = mgrl.__main__:main"]},
)
