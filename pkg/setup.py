from setuptools import setup, find_packages

setup(
    name="qbm-exact",
    version="0.1.0",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy>=1.9",
        "pydantic>=2",
        "python-dotenv",
        "tqdm",
    ],
    extras_require={"test": ["pytest", "hypothesis", "mpmath"]},
    entry_points={"console_scripts": ["qbm=qbm.cli:main"]},
)
