"""Kinematic-tree model description and JSON loading."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels as K

BASE_TYPES = {"fixed": K.BASE_FIXED, "planar": K.BASE_PLANAR, "spatial": K.BASE_SPATIAL}
JOINT_TYPES = {"revolute": K.JOINT_REVOLUTE, "prismatic": K.JOINT_PRISMATIC}


class ModelError(ValueError):
    """Raised for malformed model descriptions."""


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray


@dataclass(frozen=True)
class Foot:
    name: str
    link: str
    offset: np.ndarray


def _inertia_tensor(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.eye(3) * float(arr)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ModelError(f"inertia must be scalar, 3-vector or 3x3, got shape {arr.shape}")


@dataclass(frozen=True)
class RigidBodyModel:
    """Immutable tree-structured rigid-body model.

    Generalized positions are ``[base pose, joint angles]`` and generalized
    velocities ``[base twist (body frame), joint rates]``.  The planar base
    pose is ``(pitch, x, z)``; the spatial one ``(roll, pitch, yaw, x, y, z)``.
    """

    name: str
    floating_base: str
    gravity: np.ndarray
    links: tuple
    joints: tuple
    feet: tuple
    actuated_joints: tuple
    default_state: np.ndarray | None = None
    pd_kp: np.ndarray | None = None
    pd_kd: np.ndarray | None = None
    description: str = ""
    is_planar: bool = False
    _packed: tuple = field(default=None, repr=False, compare=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "RigidBodyModel":
        try:
            base = data.get("floating_base")
            if base is None:
                base = "planar" if data.get("planar", False) else "spatial"
            if base not in BASE_TYPES:
                raise ModelError(f"floating_base: unknown value {base!r}")
            links = tuple(
                Link(
                    name=l["name"],
                    mass=float(l["mass"]),
                    com=np.asarray(l.get("com", [0.0, 0.0, 0.0]), dtype=float),
                    inertia=_inertia_tensor(l["inertia"]),
                )
                for l in data["links"]
            )
            joints = tuple(
                Joint(
                    name=j["name"],
                    type=j.get("type", "revolute"),
                    parent=j["parent"],
                    child=j["child"],
                    axis=np.asarray(j["axis"], dtype=float),
                    origin_xyz=np.asarray(j.get("origin", {}).get("xyz", [0, 0, 0]), dtype=float),
                    origin_rpy=np.asarray(j.get("origin", {}).get("rpy", [0, 0, 0]), dtype=float),
                )
                for j in data.get("joints", [])
            )
            feet = tuple(
                Foot(name=f["name"], link=f["link"], offset=np.asarray(f["offset"], dtype=float))
                for f in data.get("feet", [])
            )
            actuated = tuple(data.get("actuated_joints", [j.name for j in joints]))
        except KeyError as exc:
            raise ModelError(f"missing model field {exc.args[0]!r}") from None
        model = cls(
            name=data.get("name", "model"),
            floating_base=base,
            gravity=np.asarray(data.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
            links=links,
            joints=joints,
            feet=feet,
            actuated_joints=actuated,
            description=data.get("description", ""),
            is_planar=bool(data.get("planar", base == "planar")),
        )
        model._validate()
        object.__setattr__(model, "_packed", model._pack())
        defaults = data.get("default_state")
        if defaults is not None:
            object.__setattr__(model, "default_state", model._state_from_spec(defaults))
        gains = data.get("pd_gains")
        if gains is not None:
            kp = np.broadcast_to(np.asarray(gains["kp"], float), (model.n_inputs,)).copy()
            kd = np.broadcast_to(np.asarray(gains["kd"], float), (model.n_inputs,)).copy()
            object.__setattr__(model, "pd_kp", kp)
            object.__setattr__(model, "pd_kd", kd)
        return model

    @classmethod
    def from_file(cls, path) -> "RigidBodyModel":
        path = Path(path)
        with path.open() as fh:
            return cls.from_dict(json.load(fh))

    def _validate(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ModelError("links: duplicate link names")
        for l in self.links:
            if l.mass <= 0:
                raise ModelError(f"links.{l.name}.mass must be positive")
            if not np.allclose(l.inertia, l.inertia.T):
                raise ModelError(f"links.{l.name}.inertia must be symmetric")
            if np.linalg.eigvalsh(l.inertia).min() <= 0:
                raise ModelError(f"links.{l.name}.inertia must be positive definite")
        children = [j.child for j in self.joints]
        if len(set(children)) != len(children):
            raise ModelError("joints: a link is the child of more than one joint (loop)")
        roots = [n for n in names if n not in children]
        if self.floating_base == "fixed":
            if roots:
                raise ModelError(f"fixed-base model has unattached links {roots}")
        elif len(roots) != 1 or roots[0] != names[0]:
            raise ModelError("floating-base model needs exactly one root link, listed first")
        seen = {"world"} if self.floating_base == "fixed" else {names[0]}
        for j in self.joints:
            if j.type not in JOINT_TYPES:
                raise ModelError(f"joints.{j.name}.type: unknown joint type {j.type!r}")
            if j.parent not in seen:
                raise ModelError(f"joints.{j.name}.parent: {j.parent!r} not defined before use")
            if j.child not in names:
                raise ModelError(f"joints.{j.name}.child: unknown link {j.child!r}")
            if np.linalg.norm(j.axis) == 0:
                raise ModelError(f"joints.{j.name}.axis must be nonzero")
            seen.add(j.child)
        jnames = {j.name for j in self.joints}
        for a in self.actuated_joints:
            if a not in jnames:
                raise ModelError(f"actuated_joints: unknown joint {a!r}")
        for f in self.feet:
            if f.link not in names:
                raise ModelError(f"feet.{f.name}.link: unknown link {f.link!r}")

    def _pack(self) -> tuple:
        btype = BASE_TYPES[self.floating_base]
        has_base = btype != K.BASE_FIXED
        body_names = ([self.links[0].name] if has_base else []) + [j.child for j in self.joints]
        index = {n: i for i, n in enumerate(body_names)}
        link_by_name = {l.name: l for l in self.links}
        nb = len(body_names)
        nbase = K.base_dofs(btype)
        parent = np.full(nb, -1, dtype=np.int64)
        jtype = np.zeros(nb, dtype=np.int64)
        axis = np.zeros((nb, 3))
        tree_R = np.tile(np.eye(3), (nb, 1, 1))
        tree_p = np.zeros((nb, 3))
        inertia = np.zeros((nb, 6, 6))
        dof = np.zeros(nb, dtype=np.int64)
        if has_base:
            jtype[0] = K.JOINT_BASE
        offset = 1 if has_base else 0
        for i, j in enumerate(self.joints):
            b = i + offset
            parent[b] = -1 if j.parent == "world" else index[j.parent]
            jtype[b] = JOINT_TYPES[j.type]
            axis[b] = j.axis / np.linalg.norm(j.axis)
            tree_R[b] = K.rpy_matrix(*j.origin_rpy)
            tree_p[b] = j.origin_xyz
            dof[b] = nbase + i
        for b, n in enumerate(body_names):
            l = link_by_name[n]
            inertia[b] = K.spatial_inertia(l.mass, l.com, l.inertia)
        foot_body = np.array([index[f.link] for f in self.feet], dtype=np.int64)
        foot_offset = np.array([f.offset for f in self.feet], dtype=float).reshape(-1, 3)
        jindex = {j.name: nbase + i for i, j in enumerate(self.joints)}
        act = np.array([jindex[a] for a in self.actuated_joints], dtype=np.int64)
        return (
            np.int64(btype), parent, jtype, axis, tree_R, tree_p, inertia, dof,
            foot_body, foot_offset, self.gravity.astype(float), act,
        )

    # -- sizes and naming -------------------------------------------------

    @property
    def packed(self) -> tuple:
        return self._packed

    @property
    def planar(self) -> bool:
        return self.is_planar

    @property
    def n_base(self) -> int:
        return K.base_dofs(BASE_TYPES[self.floating_base])

    @property
    def nv(self) -> int:
        return self.n_base + len(self.joints)

    @property
    def n_states(self) -> int:
        return 2 * self.nv

    @property
    def n_inputs(self) -> int:
        return len(self.actuated_joints)

    @property
    def n_feet(self) -> int:
        return len(self.feet)

    @property
    def force_dims(self) -> int:
        """Contact force components reported per foot (x, z when planar)."""
        return 2 if self.planar else 3

    @property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    def position_names(self) -> list:
        base = {
            "planar": ["base_pitch", "base_x", "base_z"],
            "spatial": ["base_roll", "base_pitch", "base_yaw", "base_x", "base_y", "base_z"],
            "fixed": [],
        }[self.floating_base]
        return base + [j.name for j in self.joints]

    def velocity_names(self) -> list:
        base = {
            "planar": ["base_wy", "base_vx", "base_vz"],
            "spatial": ["base_wx", "base_wy", "base_wz", "base_vx", "base_vy", "base_vz"],
            "fixed": [],
        }[self.floating_base]
        return base + [j.name + "_dot" for j in self.joints]

    def state_names(self) -> list:
        return self.position_names() + self.velocity_names()

    def angle_indices(self) -> list:
        """State indices holding base orientation angles."""
        return list(range(3 if self.floating_base == "spatial" else (1 if self.floating_base == "planar" else 0)))

    def actuated_position_indices(self) -> np.ndarray:
        return self._packed[K.M_ACT_DOF].copy()

    def _state_from_spec(self, spec) -> np.ndarray:
        if isinstance(spec, dict):
            x = np.zeros(self.n_states)
            names = self.state_names()
            for key, value in spec.items():
                if key not in names:
                    raise ModelError(f"default_state: unknown coordinate {key!r}")
                x[names.index(key)] = float(value)
            return x
        x = np.asarray(spec, dtype=float)
        if x.shape != (self.n_states,):
            raise ModelError(f"default_state: expected {self.n_states} entries, got {x.size}")
        return x

    # -- variants ---------------------------------------------------------

    def scaled_masses(self, scale: float) -> "RigidBodyModel":
        """Copy with every link mass and inertia multiplied by ``scale``."""
        if scale <= 0:
            raise ModelError("mass scale must be positive")
        links = tuple(replace(l, mass=l.mass * scale, inertia=l.inertia * scale) for l in self.links)
        model = replace(self, links=links, _packed=None)
        object.__setattr__(model, "_packed", model._pack())
        return model

    def potential_energy(self, q: np.ndarray) -> float:
        """Gravitational potential energy -sum m g.c of all links."""
        _, Rw, pw = K.kinematics(self._packed, np.asarray(q, dtype=float))
        btype = BASE_TYPES[self.floating_base]
        has_base = btype != K.BASE_FIXED
        body_names = ([self.links[0].name] if has_base else []) + [j.child for j in self.joints]
        link_by_name = {l.name: l for l in self.links}
        V = 0.0
        for b, n in enumerate(body_names):
            l = link_by_name[n]
            c = pw[b] + Rw[b] @ l.com
            V -= l.mass * float(self.gravity @ c)
        return V
