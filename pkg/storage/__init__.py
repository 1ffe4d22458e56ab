"""存储模块：KMTF 容器、sidecar 序列化、语料目录、检查点与 OBJ 导出"""
from .container import (write_tensor_container, read_tensor_container, records_to_dict,
                        ContainerError, BadMagicError, TruncatedPayloadError,
                        UnknownDtypeError, DuplicateRecordError)
from .serialize import (save_motion, load_motion, save_audio, load_audio, save_mesh, load_mesh,
                        save_key_motions, load_key_motions, sidecar_path)
from .obj_export import export_obj_sequence
from .corpus_store import save_corpus, load_corpus, CorpusLoadError
from .checkpoint import save_checkpoint, read_checkpoint, schema_path

__all__ = ['write_tensor_container', 'read_tensor_container', 'records_to_dict',
           'ContainerError', 'BadMagicError', 'TruncatedPayloadError', 'UnknownDtypeError',
           'DuplicateRecordError', 'save_motion', 'load_motion', 'save_audio', 'load_audio',
           'save_mesh', 'load_mesh', 'save_key_motions', 'load_key_motions', 'sidecar_path',
           'export_obj_sequence', 'save_corpus', 'load_corpus', 'CorpusLoadError',
           'save_checkpoint', 'read_checkpoint', 'schema_path']
