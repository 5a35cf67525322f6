from setuptools import find_packages, setup

# --------------------------------------------------
# Runtime and test dependencies
# --------------------------------------------------
install_requires = [
    "numpy>=1.24",
    "pandas>=2.0",
    "openpyxl>=3.1",
    "galois>=0.3",
]

extras_require = {
    "test": ["pytest>=7", "hypothesis>=6"],
}

# --------------------------------------------------
# Package metadata
# --------------------------------------------------
setup(
    name="intercode_lab",
    version="0.1.0",
    description="Interactive coding schemes over oblivious noise: simulations, codecs and trace checks",
    packages=find_packages(exclude=("tests", "examples", "examples.*")),
    python_requires=">=3.9",
    install_requires=install_requires,
    extras_require=extras_require,
    entry_points={
        "console_scripts": [
            "intercode-lab=intercode_lab.cli:main",
        ],
    },
)
