"""cardioem: desk-scale coupled cardiac electromechanics with closed-loop
hemodynamics, selectable deformation feedback in the monodomain equation,
stretch-activated currents, and arrhythmia analysis tooling."""

__version__ = "0.1.0"
