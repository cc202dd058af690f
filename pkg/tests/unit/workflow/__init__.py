# Workflow tests package