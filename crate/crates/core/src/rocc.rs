//! Custom-instruction codec and the command/response messages exchanged with
//! the coprocessor.
//!
//! Word layout, MSB to LSB:
//!
//! ```text
//!  31      25 24  20 19  15  14   13   12  11   7 6      0
//! | funct7   | rs2  | rs1  | xd | xs1 | xs2 | rd  | opcode |
//! ```

use std::fmt;

use thiserror::Error;

use crate::pointer::SafePointer;

/// `custom0` major opcode.
pub const CUSTOM0: u8 = 0b000_1011;

/// Symbolic argument registers used by the library builders.
pub const REG_A0: u8 = 10;
pub const REG_A1: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field {field} value {value:#x} exceeds {bits} bits")]
    FieldOutOfRange {
        field: &'static str,
        value: u32,
        bits: u32,
    },
    #[error("unknown opcode {0:#09b}")]
    UnknownOpcode(u8),
    #[error("unknown function {0:#09b}")]
    UnknownFunction(u8),
    #[error("allocation size must be non-zero")]
    ZeroSize,
}

/// The coprocessor functions selected by `funct7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Function {
    Store = 0b000_0000,
    Validate = 0b000_0001,
    Free = 0b000_0011,
}

impl Function {
    pub const ALL: [Function; 3] = [Function::Store, Function::Validate, Function::Free];

    pub fn funct7(self) -> u8 {
        self as u8
    }

    pub fn from_funct7(funct7: u8) -> Result<Self, CodecError> {
        match funct7 {
            0b000_0000 => Ok(Function::Store),
            0b000_0001 => Ok(Function::Validate),
            0b000_0011 => Ok(Function::Free),
            other => Err(CodecError::UnknownFunction(other)),
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Function::Store => "hs_store",
            Function::Validate => "hs_validate",
            Function::Free => "hs_free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoccInstruction {
    pub opcode: u8,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub xd: bool,
    pub xs1: bool,
    pub xs2: bool,
    pub funct7: u8,
}

fn check(field: &'static str, value: u8, bits: u32) -> Result<u32, CodecError> {
    let value = value as u32;
    if value >> bits != 0 {
        return Err(CodecError::FieldOutOfRange { field, value, bits });
    }
    Ok(value)
}

impl RoccInstruction {
    /// A `custom0` instruction for `function` with every other field cleared.
    pub fn new(function: Function) -> Self {
        RoccInstruction {
            opcode: CUSTOM0,
            rd: 0,
            rs1: 0,
            rs2: 0,
            xd: false,
            xs1: false,
            xs2: false,
            funct7: function.funct7(),
        }
    }

    pub fn encode(&self) -> Result<u32, CodecError> {
        let opcode = check("opcode", self.opcode, 7)?;
        let rd = check("rd", self.rd, 5)?;
        let rs1 = check("rs1", self.rs1, 5)?;
        let rs2 = check("rs2", self.rs2, 5)?;
        let funct7 = check("funct7", self.funct7, 7)?;
        Ok(funct7 << 25
            | rs2 << 20
            | rs1 << 15
            | (self.xd as u32) << 14
            | (self.xs1 as u32) << 13
            | (self.xs2 as u32) << 12
            | rd << 7
            | opcode)
    }

    /// Splits a word into fields without checking opcode or function.
    pub fn unpack(word: u32) -> Self {
        RoccInstruction {
            opcode: (word & 0x7f) as u8,
            rd: ((word >> 7) & 0x1f) as u8,
            xs2: (word >> 12) & 1 == 1,
            xs1: (word >> 13) & 1 == 1,
            xd: (word >> 14) & 1 == 1,
            rs1: ((word >> 15) & 0x1f) as u8,
            rs2: ((word >> 20) & 0x1f) as u8,
            funct7: (word >> 25) as u8,
        }
    }

    pub fn decode(word: u32) -> Result<Self, CodecError> {
        let inst = Self::unpack(word);
        inst.function()?;
        Ok(inst)
    }

    pub fn function(&self) -> Result<Function, CodecError> {
        if self.opcode != CUSTOM0 {
            return Err(CodecError::UnknownOpcode(self.opcode));
        }
        Function::from_funct7(self.funct7)
    }

    /// The core stalls for a response only when `xd` is set and `rd` is not x0.
    pub fn is_blocking(&self) -> bool {
        self.xd && self.rd != 0
    }
}

impl fmt::Display for RoccInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self
            .function()
            .map(Function::mnemonic)
            .unwrap_or("illegal");
        write!(
            f,
            "{name} rd=x{} rs1=x{} rs2=x{} xd={} xs1={} xs2={}",
            self.rd, self.rs1, self.rs2, self.xd as u8, self.xs1 as u8, self.xs2 as u8
        )
    }
}

/// A command delivered to the coprocessor: the instruction plus the source
/// register values the core forwards with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineCommand {
    pub inst: RoccInstruction,
    pub rs1_value: u64,
    pub rs2_value: u64,
    pub hart_id: u32,
    pub privileged: bool,
}

impl EngineCommand {
    fn new(inst: RoccInstruction, rs1_value: u64, rs2_value: u64) -> Self {
        EngineCommand {
            inst,
            rs1_value: if inst.xs1 { rs1_value } else { 0 },
            rs2_value: if inst.xs2 { rs2_value } else { 0 },
            hart_id: 0,
            privileged: true,
        }
    }

    pub fn on_hart(mut self, hart_id: u32) -> Self {
        self.hart_id = hart_id;
        self
    }

    pub fn privileged(mut self, privileged: bool) -> Self {
        self.privileged = privileged;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineResponse {
    pub rd: u8,
    pub data: u64,
}

/// HS_STORE: records `size` bytes of metadata for `sp`. Fire-and-forget.
pub fn build_hs_store(sp: SafePointer, size: u64) -> Result<EngineCommand, CodecError> {
    if size == 0 {
        return Err(CodecError::ZeroSize);
    }
    let inst = RoccInstruction {
        rs1: REG_A0,
        rs2: REG_A1,
        xs1: true,
        xs2: true,
        ..RoccInstruction::new(Function::Store)
    };
    Ok(EngineCommand::new(inst, sp.bits(), size))
}

/// HS_VALIDATE in its blocking form: the verdict comes back in `rd`.
pub fn build_hs_validate(sp: SafePointer) -> EngineCommand {
    let inst = RoccInstruction {
        rd: REG_A1,
        rs1: REG_A0,
        xd: true,
        xs1: true,
        ..RoccInstruction::new(Function::Validate)
    };
    EngineCommand::new(inst, sp.bits(), 0)
}

/// HS_VALIDATE with no destination register, used by the non-blocking library.
pub fn build_hs_validate_async(sp: SafePointer) -> EngineCommand {
    let inst = RoccInstruction {
        rs1: REG_A0,
        xs1: true,
        ..RoccInstruction::new(Function::Validate)
    };
    EngineCommand::new(inst, sp.bits(), 0)
}

/// HS_FREE: invalidates the metadata row for `sp`'s tag. Fire-and-forget.
pub fn build_hs_free(sp: SafePointer) -> EngineCommand {
    let inst = RoccInstruction {
        rs1: REG_A0,
        xs1: true,
        ..RoccInstruction::new(Function::Free)
    };
    EngineCommand::new(inst, sp.bits(), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_template_word() {
        // Independently packed from the field strings
        // 0000001 00000 01010 1 1 0 01011 0001011.
        let inst = RoccInstruction {
            opcode: CUSTOM0,
            rd: 11,
            rs1: 10,
            rs2: 0,
            xd: true,
            xs1: true,
            xs2: false,
            funct7: 0b000_0001,
        };
        assert_eq!(inst.encode().unwrap(), 0x0205_658B);
        assert_eq!(build_hs_validate(SafePointer::NULL).inst, inst);
    }

    #[test]
    fn zero_fields_leave_only_opcode() {
        let inst = RoccInstruction::new(Function::Store);
        assert_eq!(inst.encode().unwrap(), 0b000_1011);
    }

    #[test]
    fn decodes_the_three_functions() {
        for (funct7, f) in [(0b0000000, Function::Store), (0b0000001, Function::Validate), (0b0000011, Function::Free)] {
            let word = (funct7 << 25) | CUSTOM0 as u32;
            assert_eq!(RoccInstruction::decode(word).unwrap().function().unwrap(), f);
        }
        assert_eq!(
            RoccInstruction::decode((0b0000010 << 25) | CUSTOM0 as u32),
            Err(CodecError::UnknownFunction(0b10))
        );
        assert_eq!(RoccInstruction::decode(0), Err(CodecError::UnknownOpcode(0)));
    }

    #[test]
    fn encode_rejects_wide_fields() {
        let inst = RoccInstruction { rd: 32, ..RoccInstruction::new(Function::Store) };
        assert!(matches!(inst.encode(), Err(CodecError::FieldOutOfRange { field: "rd", .. })));
        let inst = RoccInstruction { funct7: 0x80, ..RoccInstruction::new(Function::Store) };
        assert!(inst.encode().is_err());
    }

    #[test]
    fn builder_shapes() {
        let sp = SafePointer::from_bits(0x0100_0000_0000_1000);
        for size in [1, 0x40, u64::MAX] {
            let cmd = build_hs_store(sp, size).unwrap();
            assert!(cmd.inst.xs1 && cmd.inst.xs2 && !cmd.inst.xd);
            assert!(!cmd.inst.is_blocking());
            assert_eq!((cmd.rs1_value, cmd.rs2_value), (sp.bits(), size));
            assert_eq!(cmd.inst.function(), Ok(Function::Store));
        }
        assert_eq!(build_hs_store(sp, 0), Err(CodecError::ZeroSize));

        let v = build_hs_validate(sp);
        assert!(v.inst.xs1 && v.inst.xd && !v.inst.xs2 && v.inst.rd != 0);
        assert!(v.inst.is_blocking());
        assert_eq!(v.rs1_value, sp.bits());

        let va = build_hs_validate_async(sp);
        assert!(!va.inst.is_blocking());
        assert_eq!(va.inst.function(), Ok(Function::Validate));

        let f = build_hs_free(sp);
        assert!(f.inst.xs1 && !f.inst.xd && !f.inst.xs2);
        assert_eq!(f.inst.function(), Ok(Function::Free));
    }

    #[test]
    fn blocking_needs_nonzero_rd() {
        let mut inst = RoccInstruction::new(Function::Validate);
        inst.xd = true;
        assert!(!inst.is_blocking());
        inst.rd = 5;
        assert!(inst.is_blocking());
        inst.xd = false;
        assert!(!inst.is_blocking());
    }
}
