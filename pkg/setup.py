from setuptools import setup

setup(
    name="latro",
    version="0.1.0",
    description="Hyperelastic lattice solver with a reduced-basis FETI-DP tangent solver",
    package_dir={"": "src"},
    packages=["geometry", "mechanics", "solvers", "utils"],
    py_modules=["config", "main", "runner"],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.12",
        "python-dotenv==1.0.0",
        "pydantic>=2.7,<3",
        "pydantic-settings>=2.2,<3",
        "PyYAML>=6.0.0",
        "tenacity==8.2.3",
        "tomli>=1.1.0; python_version < '3.11'",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-cov>=4.1.0",
            "black>=23.0.0",
            "isort>=5.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "latro=main:main",
        ],
    },
)
