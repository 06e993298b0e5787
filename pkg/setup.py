from setuptools import setup, find_packages

setup(
    name="netdp",
    version="0.1.0",
    description="Network-based default prediction: graph embeddings, parameter-store training, MART ensemble",
    packages=find_packages(where='.', include=['netdp', 'netdp.*']),
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.20.0',
        'scipy>=1.7.0',
        'pandas>=1.3.0',
        'matplotlib>=3.4.0',
    ],
    entry_points={
        'console_scripts': [
            'netdp=netdp.cli:main',
        ],
    },
    zip_safe=False
)
