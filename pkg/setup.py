from setuptools import setup

setup(
    name="surveygraph",
    version="0.1.0",
    description="Respondent relation graphs, latent question structure learning and graph-conditioned explanations for survey microdata",
    packages=["lib", "lib.embedders", "lib.profiles"],
    py_modules=["SurveyGraph"],
    install_requires=[
        "torch>=2.1",
        "numpy",
        "scikit-learn",
        "tqdm",
        "pyyaml",
    ],
    extras_require={"test": ["hypothesis"]},
    data_files=[
        (".", ["logging.conf"]),
        ("config", ["config/run_config.yaml", "config/synth.yaml"]),
    ],
    python_requires=">=3.9",
)
