import os
import re
import sys

from setuptools import setup


def read_version():
    with open(os.path.join("VDEARec", "__init__.py")) as fin:
        return re.search(r'__version__ = "([^"]+)"', fin.read()).group(1)


if sys.argv[-1] == "publish":
    os.system("python setup.py sdist upload")
    sys.exit()


setup(
    name="VDEARec",
    version=read_version(),
    packages=["VDEARec", "VDEARec.transport"],
    package_dir={"VDEARec": "VDEARec"},
    license="MIT",
    zip_safe=False,
    description="Variational dual-embedding alignment for partially overlapped "
                "cross-domain recommendation",
    long_description=open("README.md").read() + "\n\n"
                    + "---------\n\n"
                    + open("HISTORY.md").read(),
    long_description_content_type="text/markdown",
    package_data={"": ["README.md", "HISTORY.md"]},
    install_requires=["numpy>=1.17", "scipy", "pandas", "scikit-learn"],
    extras_require={"plots": ["matplotlib"], "mpi": ["mpi4py"]},
    entry_points={"console_scripts": ["vdearec=VDEARec.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
    ]
)
