# config.py

import os

# Presets live next to the package
base_directory = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
preset_directory = os.path.join(base_directory, 'presets')

# Alternative names for the shipped presets, as used when reporting results
preset_aliases = {
    'fig4_mirror': 'mirror',
    'fig7_falloff': 'falloff',
    'fig8_glass': 'glass',
    'fig9_plastic': 'plastic',
}

# Speed of light in the units used throughout the toolkit
speed_of_light_nm_ps = 299792.458   # nm/ps, so THz = speed_of_light_nm_ps / nm
speed_of_light_um_ps = 299.792458   # um/ps, so depth = speed_of_light_um_ps * t / 2

# Gaussian FWHM <-> sigma
fwhm_to_sigma = 1.0 / (2.0 * (2.0 * 0.6931471805599453) ** 0.5)

# Source defaults (telecom-band pair source pumped at half the wavelength)
default_center_wavelength = 1550.0       # nm
default_diagonal_fwhm = 6.3              # THz
default_antidiagonal_fwhm = 3.2          # nm
default_pump_center = 775.0              # nm
default_pump_fwhm = 10.0                 # nm
default_pair_rate = 1.0e5                # pairs/s
default_hom_visibility = 1.0

# Detection defaults
default_coincidence_window = 12500.0     # ps, one 80 MHz pump period
default_frame_span = 102.0               # nm per coincidence window
default_fibre_length = 5.0               # km
default_fibre_dispersion_per_km = 17.0   # ps/nm/km, textbook SMF
default_fibre_slope_per_km = 0.056       # ps/nm^2/km
fibre_search_half_width = 500.0          # nm either side of lambda_ref for inversion
fibre_inversion_tolerance = 1.0e-8       # nm

# Frequency sanity range accepted by the object transfer function. The lower
# bound sits well below 400 THz so telecom-band photons (1550 nm = 193 THz) pass.
frequency_range = (100.0, 1000.0)        # THz

# Reconstruction defaults
pad_factor = 8
baseline_sigma = 4.0                     # THz, width of the envelope fit used for DC removal
peak_noise_factor = 3.0                  # local max must exceed this multiple of the median
falloff_db_drop = 6.0
falloff_window = 15.0                    # um either side of the expected peak

# Pre-processing defaults
envelope_threshold = 0.05                # fraction of the strongest row
confidence_threshold = 0.5
min_fringe_frequency = 0.05              # ps, search floor for row frequency estimation
energy_floor = 1.0e-6                    # row energy relative to the strongest row
reference_tie_tolerance = 1.0e-2

# Stitching
stitch_offset_tolerance = 1.0e-3         # fraction of a bin

# Parallelism
threads_environment_variable = 'QOCT_THREADS'

# File formats
qjs_format_name = 'QJS1'
qjs_format_version = 1

# Axis units for headers and plots
axis_units = {
    'wavelength': 'nm',
    'difference_frequency': 'THz',
    'sum_frequency': 'THz',
    'arrival_time': 'ps',
}

# Color palette for line plots (A-scans, fall-off curves)
line_color_palette = [
    "#1E90FF",  # Dodger Blue
    "#FF7F50",  # Coral
    "#228B22",  # Forest Green
    "#9932CC",  # Dark Orchid
    "#DAA520",  # Goldenrod
    "#5F9EA0",  # Cadet Blue
    "#FF1493",  # Deep Pink
    "#808000",  # Olive
]

# Default figure settings
plot_settings = {
    'font_selector': 'Arial',
    'font_size': 14,
    'height': 500,
    'width': 800,
    'line_width': 2,
    'colorscale': 'Greys',
}
