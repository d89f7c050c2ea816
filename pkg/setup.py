from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="nmsparse",
    version="0.1.0",
    author="gisfromscratch",
    description="N:M semi-structured weight sparsification with salient weights, variance correction and packed storage",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests",)),
    include_package_data=True,
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy >= 1.20.0",
    ],
    extras_require={
        "test": ["pytest >= 7.0"],
    },
    entry_points={
        "console_scripts": ["nmsparse=nmsparse.cli:main"],
    },
)
