#!/usr/bin/env python3
"""
Test script to verify all imports work before running experiments
"""
import sys
import os

# Add backend to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

print("Testing imports...")

try:
    print("✓ Testing numerics...")
    import numpy
    print(f"  ✓ NumPy {numpy.__version__} OK")
    import scipy
    print(f"  ✓ SciPy {scipy.__version__} OK")

    print("✓ Testing Pydantic...")
    from pydantic import BaseModel
    from pydantic_settings import BaseSettings
    print("  ✓ Pydantic OK")

    print("✓ Testing configuration libraries...")
    import yaml
    from dotenv import load_dotenv
    print("  ✓ Configuration libraries OK")

    print("✓ Testing plotting and report generation...")
    import matplotlib
    from reportlab.platypus import SimpleDocTemplate
    print("  ✓ Matplotlib and ReportLab OK")

    print("✓ Testing download and monitoring libraries...")
    import requests
    import psutil
    print("  ✓ Requests and psutil OK")

    print("✓ Testing application modules...")
    import tensor_autodiff
    from models.network import build_model
    from services.coop_optimizer import train
    from services.comparison import compare_ladder
    from services.harness import run
    from services.verification import run_oracle_suite
    import main
    print("  ✓ Application modules OK")

    print("\n✅ All imports successful!")
    sys.exit(0)

except ImportError as e:
    print(f"\n❌ Import failed: {e}")
    sys.exit(1)
except Exception as e:
    print(f"\n❌ Unexpected error: {e}")
    sys.exit(1)
