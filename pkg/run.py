"""
Entry script for the bench: loads the .env file and hands argv to the CLI.
"""
from pathlib import Path
import shutil

from dotenv import load_dotenv

# If .env doesn't exist, create it from example
env_path = Path('.env')
env_example_path = Path('.env.example')
if not env_path.exists() and env_example_path.exists():
    shutil.copy(env_example_path, env_path)

load_dotenv()

from src.cli import main  # noqa: E402  (reads settings loaded above)

if __name__ == "__main__":
    raise SystemExit(main())
