"""Compiled smoothed environment steps with forward-mode derivatives.

These mirror the ``_Fwd`` reference path in :mod:`groundplan.worldmodel`
operation for operation; the test suite checks the two agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sig(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _sp(v, g, beta):
    z = beta * v
    val = (max(z, 0.0) + math.log1p(math.exp(-abs(z)))) / beta
    return val, g * _sig(z)


@njit(cache=True)
def _sg(v, g, beta):
    s = _sig(beta * v)
    return s, g * (beta * s * (1.0 - s))


@njit(cache=True)
def _mul(av, ag, bv, bg):
    return av * bv, ag * bv + bg * av


@njit(cache=True)
def _div(av, ag, bv, bg):
    q = av / bv
    return q, (ag - bg * q) / bv


@njit(cache=True)
def _clip(v, g, beta):
    s1v, s1g = _sp(v - 1.0, g, beta)
    s2v, s2g = _sp(-v, -g, beta)
    return v - s1v + s2v, g - s1g + s2g


@njit(cache=True)
def _block_fraction(hv, hg, uv, ug, yv, yg, ayv, ayg, lo, hi, beta, bw):
    hpv, hpg = _sp(hv, hg, bw)
    ov, og = _sp(uv - hv, ug - hg, bw)
    # the tiny term only matters when both softplus values underflow
    fv, fg = _div(ov, og, ov + hpv + 1e-300, og + hpg)
    pv, pg = _mul(1.0 - fv, -fg, ayv, ayg)
    ycv = yv + pv
    ycg = yg + pg
    g1v, g1g = _sg(ycv - lo, ycg, beta)
    g2v, g2g = _sg(hi - ycv, -ycg, beta)
    inv, ing = _mul(g1v, g1g, g2v, g2g)
    tv, tg = _sg(uv, ug, bw)
    mv, mg = _mul(tv, tg, 1.0 - inv, -ing)
    return _mul(mv, mg, fv, fg)


@njit(cache=True)
def wall_step(obs, act, wall_x, half_t, lo, hi, beta, bw):
    B = obs.shape[0]
    out = np.empty((B, 2))
    jac = np.empty((B, 2, 4))
    eye = np.eye(4)
    face_l = wall_x - half_t
    face_r = wall_x + half_t
    for b in range(B):
        px, gpx = obs[b, 0], eye[0]
        py, gpy = obs[b, 1], eye[1]
        # clip the target to the arena first, then truncate at the wall
        txv, txg = _clip(px + act[b, 0], gpx + eye[2], beta)
        tyv, tyg = _clip(py + act[b, 1], gpy + eye[3], beta)
        ax, gax = txv - px, txg - gpx
        ay, gay = tyv - py, tyg - gpy
        wlv, wlg = _block_fraction(face_l - px, -gpx, ax, gax, py, gpy, ay, gay, lo, hi, beta, bw)
        wrv, wrg = _block_fraction(px - face_r, gpx, -ax, -gax, py, gpy, ay, gay, lo, hi, beta, bw)
        glv, glg = _sg(face_r - 0.5 * half_t - px, -gpx, bw)
        grv, grg = _sg(px - face_l - 0.5 * half_t, gpx, bw)
        m1v, m1g = _mul(glv, glg, wlv, wlg)
        m2v, m2g = _mul(grv, grg, wrv, wrg)
        kv, kg = _mul(1.0 - m1v, -m1g, 1.0 - m2v, -m2g)
        sxv, sxg = _mul(kv, kg, ax, gax)
        syv, syg = _mul(kv, kg, ay, gay)
        out[b, 0] = px + sxv
        out[b, 1] = py + syv
        jac[b, 0] = gpx + sxg
        jac[b, 1] = gpy + syg
    return out, jac


@njit(cache=True)
def push_step(obs, act, radius, beta):
    B = obs.shape[0]
    out = np.empty((B, 4))
    jac = np.empty((B, 4, 6))
    eye = np.eye(6)
    for b in range(B):
        gx, ggx = obs[b, 0], eye[0]
        gy, ggy = obs[b, 1], eye[1]
        bx, gbx = obs[b, 2], eye[2]
        by, gby = obs[b, 3], eye[3]
        ax, gax = act[b, 0], eye[4]
        ay, gay = act[b, 1], eye[5]
        mxv, mxg = _clip(gx + ax, ggx + gax, beta)
        myv, myg = _clip(gy + ay, ggy + gay, beta)
        dxv = bx - mxv
        dxg = gbx - mxg
        dyv = by - myv
        dyg = gby - myg
        sqv = dxv * dxv + dyv * dyv + 1e-24
        sqg = 2.0 * dxv * dxg + 2.0 * dyv * dyg
        dv = math.sqrt(sqv)
        dg = sqg / (2.0 * dv)
        ovv, ovg = _sp(radius - dv, -dg, beta)
        puv, pug = _div(ovv, ovg, dv, dg)
        qxv, qxg = _mul(dxv, dxg, puv, pug)
        qyv, qyg = _mul(dyv, dyg, puv, pug)
        b0v, b0g = _clip(bx + qxv, gbx + qxg, beta)
        b1v, b1g = _clip(by + qyv, gby + qyg, beta)
        out[b, 0] = mxv
        out[b, 1] = myv
        out[b, 2] = b0v
        out[b, 3] = b1v
        jac[b, 0] = mxg
        jac[b, 1] = myg
        jac[b, 2] = b0g
        jac[b, 3] = b1g
    return out, jac
