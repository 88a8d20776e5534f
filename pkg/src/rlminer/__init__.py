"""Value-guided mining of closed-path rules over knowledge graphs."""
