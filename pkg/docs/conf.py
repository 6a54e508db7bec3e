# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder.
#
# For the full list of options see the documentation:
# http://www.sphinx-doc.org/en/master/config

# -- Path setup --------------------------------------------------------------

import datetime
import os
import sys

sys.path.insert(0, os.path.abspath("../"))
sys.path.insert(0, os.path.abspath("../src"))

import sinkscale  # noqa: E402

# -- Project information -----------------------------------------------------

project = "sinkscale"

copyright = (
    f"{datetime.date.today().year}, The {project} Developers"  # noqa: A001
)
# Versions built from an untagged commit carry a fourth component
if len(sinkscale.__version__.split(".")) > 3:
    version = "dev"
else:
    version = sinkscale.__version__


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.napoleon",  # Numpy style doc support
    "sphinx_remove_toctrees",  # Remove api generated stubs from doctree
    "sphinxcontrib.autodoc_pydantic",  # json schema display for models
    "sphinx.ext.autosummary",  # Generate API stubs for each object
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
    "sphinx.ext.mathjax",
    "sphinx_copybutton",
    "myst_nb",
    "sphinx_design",
]

remove_from_toctrees = ["reference/api/*"]

# https://autodoc-pydantic.readthedocs.io/en/stable/users/installation.html
autodoc_pydantic_model_show_json = True
autodoc_pydantic_settings_show_json = False
autosummary_generate = True

# Colon fence for card support in md, dollar math for the guide pages
myst_enable_extensions = ["colon_fence", "dollarmath"]

templates_path = ["_templates"]

master_doc = "index"

exclude_patterns = [
    "_build",
    "reference/api",
]

pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------------

html_title = "sinkscale docs"
html_theme = "pydata_sphinx_theme"

html_theme_options = {
    "header_links_before_dropdown": 5,
    "show_toc_level": 1,
    "footer_start": ["copyright"],
}


intersphinx_mapping = {
    "Python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}

autodoc_default_options = {
    "member-order": "bysource",
    "members": True,
    "undoc-members": True,
}


# NamedTuple helpers that clutter every record type page
tuple_members_to_skip = {"count", "index"}


def skip_member(app, what, name, obj, skip, options):
    """
    Decide whether autodoc skips a member.

    Connected to the ``autodoc-skip-member`` event. Dunder methods and the
    ``count``/``index`` helpers inherited from ``tuple`` are left out of
    the record type pages.

    Parameters
    ----------
    app : `sphinx.application.Sphinx`
        The Sphinx application object.
    what : str
        The type of the object the member belongs to.
    name : str
        The name of the member.
    obj : object
        The member object itself.
    skip : bool
        Whether autodoc would skip the member without this hook.
    options : object
        The options given to the directive.

    Returns
    -------
    bool
        True if the member should be skipped.
    """
    if name in tuple_members_to_skip:
        return True
    if name.startswith("__") and name.endswith("__"):
        return True
    return skip


def setup(app):
    """Connect :func:`skip_member` to the ``autodoc-skip-member`` event."""
    app.connect("autodoc-skip-member", skip_member)
