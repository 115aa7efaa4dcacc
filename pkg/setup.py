#!/usr/bin/env python3
import re

from setuptools import setup, find_packages

# rilltools imports numpy on import, so the version is read from the source
with open('rilltools/__init__.py', encoding='utf-8') as f:
    version = re.search(r"^__version__ = '([^']+)'", f.read(), re.M).group(1)

setup(
    name='rilltools',
    version=version,
    packages=find_packages(),
    scripts=['bin/rill'],
    python_requires='>=3.8',
    install_requires=['numpy>=1.17', 'pyparsing>=3.0'],
    extras_require={
        'cli': ['click', 'tabulate'],
        'test': ['pytest', 'click', 'tabulate'],
        'dev': ['ipython', 'Sphinx', 'pytest', 'click', 'tabulate'],
    },
    # metadata that uploads to PyPI
    author='Roy Enjoy',
    author_email='kirpit [at] gmail [dot] com',
    description="""rilltools compiles first-order implication rules into differentiable
fuzzy logic losses, reshapes them with reduced implication-bias transforms
(L2, hinge and L2 hinge) and trains small classifiers on the combined task and
logic objective. It also ships the diagnostics and sweeps that expose the
implication bias of fuzzy logic losses, and a "rill" command to run them.""",
    license='GNU General Public License v3',
    keywords='neuro-symbolic, fuzzy logic, logic loss, implication bias, semi-supervised',
    url='https://github.com/kirpit/rilltools',
    zip_safe=True,
)
