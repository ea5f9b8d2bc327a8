"""
PlantWatch Setup Script - Installs dependencies and checks the testbed can start.
"""

import os
import subprocess
import sys
from pathlib import Path


def check_python_version():
    """Check if Python version is compatible."""
    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required")
        print(f"Current version: {sys.version}")
        return False

    print(f"✅ Python version: {sys.version}")
    return True


def install_dependencies():
    """Install required Python packages."""
    print("📦 Installing dependencies...")

    try:
        subprocess.check_call([
            sys.executable, "-m", "pip", "install", "-r", "requirements.txt"
        ])
        print("✅ Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Failed to install dependencies: {e}")
        return False


def create_directories():
    """Create log and run directories."""
    print("📁 Creating directories...")

    for directory in ("logs", "runs"):
        os.makedirs(directory, exist_ok=True)
        print(f"   Created: {directory}")

    print("✅ Directories created")
    return True


def check_config():
    """Check the config file and both scenario suites are present."""
    missing = [p for p in ("config/config.yaml", "scenarios/chem.yaml", "scenarios/line.yaml")
               if not Path(p).exists()]
    if missing:
        print(f"❌ Missing: {', '.join(missing)}")
        return False
    print("✅ Configuration and scenario files found")
    return True


def run_quick_test():
    """Load the config and both scenario suites."""
    print("🧪 Running quick test...")

    try:
        from utils import Config
        from harness.campaign import platform_scenarios

        config = Config("config/config.yaml")
        for platform in ("chem", "line"):
            scenarios = platform_scenarios(config, platform)
            print(f"   {platform}: {len(scenarios)} attack scenarios")

        print("✅ All modules imported successfully")
        return True

    except Exception as e:
        print(f"❌ Test failed: {e}")
        return False


def print_usage_instructions():
    """Print usage instructions."""
    print("\n" + "=" * 60)
    print("🏭 PlantWatch Setup Complete!")
    print("=" * 60)
    print()
    print("Usage Examples:")
    print()
    print("1. Run the chemical plant and its PLC:")
    print("   python main.py simulate chem --seconds 600")
    print()
    print("2. Record a benign and an attacked capture:")
    print("   python main.py collect chem runs/benign.csv")
    print("   python main.py collect chem runs/attack.csv --scenario tank_level_max")
    print()
    print("3. Train and monitor:")
    print("   python main.py train ocsvm runs/benign.csv -o runs/ocsvm.json")
    print("   python main.py monitor runs/ocsvm.json runs/attack.csv")
    print()
    print("4. Full campaign (reduced):")
    print("   python main.py campaign line --smoke")
    print()
    print("Logs:")
    print("   Check logs/plantwatch.log for application logs")
    print("=" * 60)


def main():
    """Main setup function."""
    print("🚀 PlantWatch Setup")
    print()

    steps = [
        ("Checking Python version", check_python_version),
        ("Installing dependencies", install_dependencies),
        ("Creating directories", create_directories),
        ("Checking configuration", check_config),
        ("Running tests", run_quick_test)
    ]

    failed_steps = []

    for step_name, step_func in steps:
        print(f"\n{step_name}...")
        if not step_func():
            failed_steps.append(step_name)

    print("\n" + "=" * 60)

    if failed_steps:
        print("❌ Setup completed with errors:")
        for step in failed_steps:
            print(f"   - {step}")
        print("\nPlease resolve the issues above before running PlantWatch.")
    else:
        print("✅ Setup completed successfully!")
        print_usage_instructions()


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build backend (egg_info, dist_info, ...): packaging metadata lives in pyproject.toml.
        from setuptools import setup
        setup()
    else:
        main()
