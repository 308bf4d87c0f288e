from flask import Flask

from .config import config_from_env


def create_app(test_config: dict | None = None) -> Flask:
    """
    App factory.

    Run defaults come from RunConfig and the APP_* environment overrides;
    ``test_config`` is applied last.
    """
    app = Flask(__name__, instance_relative_config=False)

    defaults = config_from_env()
    app.config.from_mapping(
        SEED=defaults.seed,
        POINTS=defaults.points,
        T_MAX=defaults.t_max,
        EPS=defaults.eps,
        SYSTEMS_DIR=defaults.systems_dir,
        MAX_CONTENT_LENGTH=1024 * 1024,
        JSON_SORT_KEYS=False,
        TESTING=False,
    )

    if test_config:
        app.config.update(test_config)

    from .routes import api_bp
    app.register_blueprint(api_bp)

    return app
