"""
Main application entry point for the bosonic control toolkit CLI.
"""
import logging
import os

from dotenv import load_dotenv
from flask import Flask
from flask.cli import FlaskGroup

from commands.compile import compile_bp
from commands.optimize import optimize_bp
from commands.run import run_bp
from commands.tomography import tomography_bp
from commands.verify import verify_bp

# Load environment variables
load_dotenv()

LOG_LEVEL = os.getenv('BOSONIC_CTRL_LOG_LEVEL', 'INFO').upper()
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def create_app() -> Flask:
    """
    Application factory pattern for creating Flask app instances.

    The app carries no routes; its blueprints only register CLI commands.

    Returns:
        Flask: Configured Flask application instance
    """
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)

    app = Flask(__name__)

    # Load configuration from environment variables
    app.config['OUTPUT_ROOT'] = os.getenv('BOSONIC_CTRL_OUTPUT', 'runs')
    app.config['WORKERS'] = os.getenv('BOSONIC_CTRL_WORKERS')
    app.logger.setLevel(LOG_LEVEL)

    # Register command blueprints
    app.register_blueprint(optimize_bp)
    app.register_blueprint(compile_bp)
    app.register_blueprint(run_bp)
    app.register_blueprint(tomography_bp)
    app.register_blueprint(verify_bp)

    return app


# Console entry point: `python app.py <command>` or `flask --app app <command>`
cli = FlaskGroup(create_app=create_app, add_default_commands=False,
                 help='Crosstalk-robust multimode bosonic control toolkit.')

if __name__ == '__main__':
    cli()
