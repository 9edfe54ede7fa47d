from abc import ABC, abstractmethod

import numpy as np


class Base(ABC):
    """A base class for iterative vector methods.

    This class cannot be instantiated directly.
    Subclasses should implement :meth:`cellfree_fl.Base._update_iterate`.
    Subclasses will typically be constructed using
    :meth:`cellfree_fl.Base.iterates` or :meth:`cellfree_fl.Base.solve`.

    Parameters
    ----------
    x0 : (n,) array_like
        Starting iterate.
    tol : float, optional
        Stop once ``max(abs(x_k - x_{k-1})) <= tol``. Pass ``None`` to ignore the tolerance.
    maxiter : int or float, optional
        Maximum number of iterations. At least one of ``tol`` or ``maxiter`` must be passed.
    callback : function, optional
        User-supplied function to call after each iteration.
        It is called as ``callback(xk)``,
        where xk is the current iterate.

    Notes
    -----
    There may be additional parameters not listed above
    depending on the subclass.
    """

    def __init__(self, x0, tol=None, maxiter=None, callback=None):
        if tol is None and maxiter is None:
            raise ValueError("At least one of ``tol`` or ``maxiter`` must be specified.")

        self._x0 = np.array(x0, dtype="float64").ravel()
        self._tol = tol
        self._maxiter = np.inf if maxiter is None else maxiter

        if callback is None:

            def callback(xk):
                return None

        self._callback = callback

        self._k = -1
        self._xk = None
        self._step = np.inf

    @property
    def k(self):
        """int: Number of updates applied so far. ``-1`` before the first iterate is produced."""
        return self._k

    @property
    def xk(self):
        """(n,) array: The most recent iterate."""
        return self._xk.copy()

    @property
    def step(self):
        """float: ``max(abs(x_k - x_{k-1}))`` for the most recent update, ``inf`` before any update."""
        return self._step

    @classmethod
    def iterates(cls, *base_args, **base_kwargs):
        """Get the iterates of the method.

        Note
        ----
        This method takes the same parameters as :class:`cellfree_fl.Base`
        or the subclass from which it is called.

        Returns
        -------
        iterates : iterable((n,) array)
            An iterable of the iterates, starting with ``x0``.
        """
        return cls(*base_args, **base_kwargs)

    @classmethod
    def solve(cls, *base_args, **base_kwargs):
        """Run the method until its stopping criterion fires.

        Note
        ----
        This method takes the same parameters as :class:`cellfree_fl.Base`
        or the subclass from which it is called.

        Returns
        -------
        x : (n,) array
            The final iterate.
        """
        iterates = cls.iterates(*base_args, **base_kwargs)
        for x in iterates:
            pass
        return x

    def __next__(self):
        """Perform an iteration.

        Returns
        -------
        xk : (n,) array
            The next iterate.
        """
        if self._k == -1:
            self._k += 1
            self._xk = self._x0
            self._callback(self.xk)
            return self.xk

        if self._stopping_criterion(self._k, self._xk):
            raise StopIteration

        self._k += 1
        xkp1 = self._update_iterate(self._xk)
        self._step = float(np.max(np.abs(xkp1 - self._xk), initial=0.0))
        self._xk = xkp1

        self._callback(self.xk)

        return self.xk

    def __iter__(self):
        """Iterator over the iterates."""
        return self

    @abstractmethod
    def _update_iterate(self, xk):
        """Compute the next iterate.

        Parameters
        ----------
        xk : (n,) array
            The current iterate. Must not be modified in place.

        Returns
        -------
        xkp1 : (n,) array
            The next iterate.
        """

    def _stopping_criterion(self, k, xk):
        """Check if the iteration should terminate.

        Parameters
        ----------
        k : int
            The number of iterations that have passed.
        xk : (n,) array
            The current iterate.

        Returns
        -------
        stop : bool
            True if the iteration should be terminated.
        """
        if k >= self._maxiter:
            return True

        if self._tol is not None and self._step <= self._tol:
            return True

        return False
