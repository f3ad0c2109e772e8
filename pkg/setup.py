from setuptools import setup, find_packages

setup(
    name="saaki-risk-pipeline",
    version="1.0.0",
    description="SA-AKI Mortality Risk Pipeline - Imputes, selects, trains and explains ICU mortality risk models",
    author="Clinical Analytics",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["main"],
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pandas>=2.0",
        "scikit-learn>=1.3",
        "joblib>=1.3",
        "python-dotenv>=1.1.1",
    ],
    extras_require={
        "test": ["pytest>=7.4"],
    },
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "saaki-risk=main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Healthcare Industry",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
